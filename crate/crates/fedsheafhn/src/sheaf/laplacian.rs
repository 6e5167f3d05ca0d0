//! The cellular-sheaf Laplacian and its degree-normalized form.
//!
//! For a sheaf with stalk dimension `d` over a graph, each incident
//! (node, edge) pair carries a `d x d` restriction map `F`. The Laplacian
//! has diagonal blocks `sum_{e at n} F_ne^T F_ne` and off-diagonal blocks
//! `-F_ne^T F_me` for an edge `e = (n, m)`; it equals `delta^T delta` for
//! the coboundary `delta` and is therefore symmetric PSD. With identity
//! maps and `d = 1` it reduces to the combinatorial graph Laplacian.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::sheaf::CollaborationGraph;

/// Default eigenvalue floor used when inverting near-singular degree blocks.
pub const DEGREE_EIGENVALUE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SheafLaplacian {
    pub num_nodes: usize,
    pub d: usize,
    pub edges: Vec<(usize, usize)>,
    /// `[2|E| x d*d]` restriction maps; row `2e` is the lower-endpoint side
    /// of edge `e`, row `2e + 1` the higher-endpoint side.
    pub maps: Tensor,
    /// Dense `[n*d x n*d]` operator.
    pub matrix: Tensor,
}

/// Assembles the sheaf Laplacian from per-pair restriction maps.
pub fn build_sheaf_laplacian(
    edges: &[(usize, usize)],
    num_nodes: usize,
    maps: &Tensor,
    d: usize,
) -> Result<SheafLaplacian> {
    if maps.shape() != [2 * edges.len(), d * d] {
        return Err(Error::ShapeMismatch {
            op: "build_sheaf_laplacian",
            expected: format!("[{} x {}] restriction maps", 2 * edges.len(), d * d),
            got: format!("{:?}", maps.shape()),
        });
    }
    let mut tape = Tape::new();
    let m = tape.constant(maps.clone());
    let l = tape.sheaf_laplacian(m, edges, num_nodes, d)?;
    Ok(SheafLaplacian {
        num_nodes,
        d,
        edges: edges.to_vec(),
        maps: maps.clone(),
        matrix: tape.value(l).clone(),
    })
}

/// Same assembly, with the edge set taken from a collaboration graph.
pub fn build_for_graph(g: &CollaborationGraph, maps: &Tensor, d: usize) -> Result<SheafLaplacian> {
    build_sheaf_laplacian(&g.edges, g.num_clients, maps, d)
}

impl SheafLaplacian {
    pub fn dim(&self) -> usize {
        self.num_nodes * self.d
    }

    pub fn diagonal_block(&self, node: usize) -> Tensor {
        let d = self.d;
        let mut out = Tensor::zeros(&[d, d]);
        for r in 0..d {
            for c in 0..d {
                out.set(r, c, self.matrix.at(node * d + r, node * d + c));
            }
        }
        out
    }

    /// Degree-normalized operator `D^{-1/2} L D^{-1/2}`, where `D` is the
    /// block diagonal of `L` and near-singular blocks are floored at `eps`.
    pub fn normalized(&self, eps: f64) -> Result<SheafLaplacian> {
        let mut tape = Tape::new();
        let l = tape.constant(self.matrix.clone());
        let dinv = tape.block_diag_inv_sqrt(l, self.d, eps)?;
        let dl = tape.matmul(dinv, l)?;
        let delta = tape.matmul(dl, dinv)?;
        Ok(SheafLaplacian {
            num_nodes: self.num_nodes,
            d: self.d,
            edges: self.edges.clone(),
            maps: self.maps.clone(),
            matrix: tape.value(delta).clone(),
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.matrix.max_abs_diff(&self.matrix.transposed())
    }

    /// Applies the operator to a flat section of length `n*d`.
    pub fn apply(&self, section: &[f64]) -> Result<Vec<f64>> {
        let nd = self.dim();
        if section.len() != nd {
            return Err(Error::invalid(format!(
                "apply: section length {} != {nd}",
                section.len()
            )));
        }
        let x = Tensor::new(vec![nd, 1], section.to_vec())?;
        Ok(self.matrix.matmul(&x)?.into_data())
    }
}

/// Brute-force coboundary matrix `[|E|*d x n*d]` with the fixed orientation
/// `(lo, hi)`: `(delta x)|_e = F_lo x_lo - F_hi x_hi`. Test oracle for the
/// Laplacian assembly: `L = delta^T delta`.
pub fn coboundary_dense(
    edges: &[(usize, usize)],
    num_nodes: usize,
    maps: &Tensor,
    d: usize,
) -> Tensor {
    let nd = num_nodes * d;
    let mut delta = Tensor::zeros(&[edges.len() * d, nd]);
    for (e, &(lo, hi)) in edges.iter().enumerate() {
        let fa = maps.row(2 * e);
        let fb = maps.row(2 * e + 1);
        for r in 0..d {
            for c in 0..d {
                delta.set(e * d + r, lo * d + c, fa[r * d + c]);
                delta.set(e * d + r, hi * d + c, -fb[r * d + c]);
            }
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::linalg::sym_min_eigenvalue;
    use crate::rng::{randn, stream};

    fn random_sheaf(n: usize, d: usize, extra_edges: usize, seed: u64) -> (Vec<(usize, usize)>, Tensor) {
        // A path plus some chords keeps the graph connected and irregular.
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
        for i in 0..extra_edges {
            let a = (seed as usize + i * 3) % n;
            let b = (seed as usize + i * 5 + 2) % n;
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut rng = stream(seed, &[60]);
        let maps = randn(&[2 * edges.len(), d * d], 1.0, &mut rng);
        (edges, maps)
    }

    #[test]
    fn identity_sheaf_reduces_to_graph_laplacian() {
        let edges = vec![(0, 1), (1, 2), (0, 2), (2, 3)];
        let maps = Tensor::filled(&[8, 1], 1.0);
        let l = build_sheaf_laplacian(&edges, 4, &maps, 1).unwrap();
        let expect = [
            [2.0, -1.0, -1.0, 0.0],
            [-1.0, 2.0, -1.0, 0.0],
            [-1.0, -1.0, 3.0, -1.0],
            [0.0, 0.0, -1.0, 1.0],
        ];
        for (i, row) in expect.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((l.matrix.at(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn path_graph_with_scalar_maps() {
        // Edge (0, 1), d = 1, F_0 = 2 and F_1 = 3 gives [[4, -6], [-6, 9]].
        let maps = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
        let l = build_sheaf_laplacian(&[(0, 1)], 2, &maps, 1).unwrap();
        assert_eq!(l.matrix.data(), &[4.0, -6.0, -6.0, 9.0]);
    }

    #[test]
    fn equals_coboundary_gram_matrix() {
        for seed in 0..10 {
            let d = 1 + (seed as usize % 3);
            let (edges, maps) = random_sheaf(5, d, 3, seed);
            let l = build_sheaf_laplacian(&edges, 5, &maps, d).unwrap();
            let delta = coboundary_dense(&edges, 5, &maps, d);
            let gram = delta.transposed().matmul(&delta).unwrap();
            assert!(l.matrix.max_abs_diff(&gram) < 1e-10);
        }
    }

    #[test]
    fn symmetric_and_psd() {
        for seed in 0..10 {
            let d = 1 + (seed as usize % 3);
            let (edges, maps) = random_sheaf(6, d, 4, seed + 100);
            let l = build_sheaf_laplacian(&edges, 6, &maps, d).unwrap();
            assert!(l.max_asymmetry() <= 1e-10);
            let min = sym_min_eigenvalue(l.matrix.data(), l.dim());
            assert!(min >= -1e-8, "min eigenvalue {min}");
        }
    }

    #[test]
    fn missing_restriction_maps_rejected() {
        let maps = Tensor::zeros(&[1, 1]);
        assert!(build_sheaf_laplacian(&[(0, 1)], 2, &maps, 1).is_err());
    }

    #[test]
    fn normalized_identity_sheaf_on_regular_graph() {
        // 4-cycle is 2-regular: normalized Laplacian is I - A/2.
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let maps = Tensor::filled(&[8, 1], 1.0);
        let l = build_sheaf_laplacian(&edges, 4, &maps, 1).unwrap();
        let norm = l.normalized(1e-8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let adj = edges.contains(&(i.min(j), i.max(j))) && i != j;
                let expect = if i == j {
                    1.0
                } else if adj {
                    -0.5
                } else {
                    0.0
                };
                assert!((norm.matrix.at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_kills_scaled_constant_section() {
        // For the identity sheaf, D^{1/2} * ones spans the kernel of the
        // normalized Laplacian.
        let edges = vec![(0, 1), (1, 2), (0, 2), (2, 3)];
        let maps = Tensor::filled(&[8, 1], 1.0);
        let l = build_sheaf_laplacian(&edges, 4, &maps, 1).unwrap();
        let norm = l.normalized(1e-8).unwrap();
        let deg = [2.0f64, 2.0, 3.0, 1.0];
        let section: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
        let out = norm.apply(&section).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn normalized_is_psd_on_random_sheaves() {
        for seed in 0..10 {
            let d = 1 + (seed as usize % 3);
            let (edges, maps) = random_sheaf(6, d, 3, seed + 300);
            let l = build_sheaf_laplacian(&edges, 6, &maps, d).unwrap();
            let norm = l.normalized(1e-8).unwrap();
            assert!(norm.max_asymmetry() <= 1e-10);
            let min = sym_min_eigenvalue(norm.matrix.data(), norm.dim());
            assert!(min >= -1e-8, "seed {seed}: min {min}");
        }
    }
}
