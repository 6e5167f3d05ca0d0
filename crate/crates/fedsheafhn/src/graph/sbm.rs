//! Stochastic block model generator with class-mean features.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{standard_normal, stream, STREAM_SBM_EDGES, STREAM_SBM_FEATURES};

/// Standard deviation of Gaussian feature noise around each block's mean
/// vector. Chosen so blocks overlap enough that a one-size-fits-all model
/// has to work for its accuracy.
pub const FEATURE_NOISE_STD: f64 = 0.8;

/// Samples a stochastic block model graph.
///
/// Node labels are block ids; node features are the block's one-hot mean
/// vector (index `block mod f`) plus i.i.d. Gaussian noise. Within-block
/// pairs get an edge with probability `p_in`, cross-block pairs with
/// `p_out`.
pub fn sbm_generate(
    blocks: &[usize],
    p_in: f64,
    p_out: f64,
    f: usize,
    seed: u64,
) -> Result<Graph> {
    if blocks.is_empty() || blocks.contains(&0) {
        return Err(Error::invalid("sbm: empty block"));
    }
    if f == 0 {
        return Err(Error::invalid("sbm: feature dimension must be positive"));
    }
    if !(0.0..=1.0).contains(&p_out) || !(p_out..=1.0).contains(&p_in) {
        return Err(Error::invalid(format!(
            "sbm: need 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    let n: usize = blocks.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (b, &size) in blocks.iter().enumerate() {
        labels.extend(std::iter::repeat_n(b, size));
    }

    let mut edge_rng = stream(seed, &[STREAM_SBM_EDGES]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = stream(seed, &[STREAM_SBM_FEATURES]);
    let mut features = vec![0.0; n * f];
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut features[i * f..(i + 1) * f];
        for x in row.iter_mut() {
            *x = FEATURE_NOISE_STD * standard_normal(&mut feat_rng);
        }
        row[label % f] += 1.0;
    }

    Graph::new(
        n,
        edges,
        Tensor::new(vec![n, f], features)?,
        labels,
        blocks.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_disjoint_cliques() {
        let g = sbm_generate(&[2, 2], 1.0, 0.0, 4, 11).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (2, 3)]);
        assert_eq!(g.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn same_seed_reproduces_graph() {
        let a = sbm_generate(&[5, 5], 0.4, 0.1, 3, 42).unwrap();
        let b = sbm_generate(&[5, 5], 0.4, 0.1, 3, 42).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.features.data(), b.features.data());
    }

    #[test]
    fn empty_block_rejected() {
        assert!(sbm_generate(&[3, 0], 0.5, 0.1, 2, 1).is_err());
    }

    #[test]
    fn inverted_probabilities_rejected() {
        assert!(sbm_generate(&[3, 3], 0.1, 0.5, 2, 1).is_err());
    }

    #[test]
    fn uniform_probability_gives_uniform_density() {
        // With p_in == p_out the expected density is exactly p; check the
        // Monte-Carlo mean over 20 seeds stays within 3 sigma.
        let p = 0.3;
        let n = 30usize;
        let pairs = n * (n - 1) / 2;
        let mut total = 0usize;
        let seeds = 20;
        for seed in 0..seeds {
            let g = sbm_generate(&[15, 15], p, p, 2, seed).unwrap();
            total += g.num_edges();
        }
        let mean_density = total as f64 / (seeds as f64 * pairs as f64);
        let sigma = (p * (1.0 - p) / (seeds as f64 * pairs as f64)).sqrt();
        assert!(
            (mean_density - p).abs() <= 3.0 * sigma,
            "density {mean_density} vs p {p} (3 sigma {})",
            3.0 * sigma
        );
    }
}
