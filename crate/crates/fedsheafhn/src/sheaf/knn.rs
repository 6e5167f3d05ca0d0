//! KNN collaboration graph over cosine similarity of client embeddings.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sheaf::CollaborationGraph;

/// Cosine similarity; zero-norm vectors are treated as similarity 0 to
/// everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Links every client to its `k` most cosine-similar peers and
/// symmetrizes by union. Ties break toward the lower client index.
pub fn knn_graph(x0: &Tensor, k: usize) -> Result<CollaborationGraph> {
    if !x0.is_matrix() {
        return Err(Error::invalid("knn_graph: embeddings must be a matrix"));
    }
    let n = x0.rows();
    if n < 2 {
        return Err(Error::invalid(format!("knn_graph: need at least 2 clients, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("knn_graph: need 1 <= k < {n}, got {k}")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, cosine_similarity(x0.row(i), x0.row(j))))
            .collect();
        // Highest similarity first; equal similarities prefer lower index.
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, _) in candidates.iter().take(k) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    CollaborationGraph::new(n, edges, x0.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clients_single_edge() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = knn_graph(&x, 1).unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn identical_embeddings_tie_break_to_lowest_index() {
        let x = Tensor::new(vec![4, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let g = knn_graph(&x, 1).unwrap();
        // Node 0 links to 1 (its lowest-index peer); 1, 2, 3 all link to 0.
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn matches_brute_force_cosine_ranking() {
        // Four unit vectors at known angles from the x-axis.
        let angles = [0.0f64, 0.4, 1.4, 3.0];
        let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let g = knn_graph(&x, 1).unwrap();
        // Brute-force: each node's nearest neighbor by cosine (max dot).
        let mut expect = Vec::new();
        for i in 0..4 {
            let best = (0..4)
                .filter(|&j| j != i)
                .max_by(|&a, &b| {
                    cosine_similarity(&rows[i], &rows[a])
                        .partial_cmp(&cosine_similarity(&rows[i], &rows[b]))
                        .unwrap()
                })
                .unwrap();
            expect.push((i.min(best), i.max(best)));
        }
        expect.sort_unstable();
        expect.dedup();
        assert_eq!(g.edges, expect);
    }

    #[test]
    fn every_node_has_degree_at_least_k() {
        let x = Tensor::new(
            vec![5, 3],
            vec![
                1.0, 0.2, 0.0, 0.9, 0.1, 0.3, 0.0, 1.0, 0.5, 0.2, 0.8, 0.9, 0.4, 0.4, 0.4,
            ],
        )
        .unwrap();
        for k in 1..4 {
            let g = knn_graph(&x, k).unwrap();
            assert!(g.degrees().iter().all(|&d| d >= k), "k={k}: {:?}", g.degrees());
        }
    }

    #[test]
    fn zero_norm_rows_rank_last() {
        let x = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.9, 0.1, 0.0, 0.0]).unwrap();
        let g = knn_graph(&x, 1).unwrap();
        // Node 2 has no direction; others prefer each other, and node 2's
        // own pick ties at similarity 0 and falls to node 0.
        assert!(g.edges.contains(&(0, 1)));
        assert!(g.edges.contains(&(0, 2)));
    }

    #[test]
    fn single_client_is_an_error() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(knn_graph(&x, 1).is_err());
    }
}
