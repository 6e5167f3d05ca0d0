//! Server-side sheaf collaboration: the KNN collaboration graph over client
//! embeddings, the cellular-sheaf Laplacian, and the learnable diffusion
//! stack that enriches client descriptors.

mod diffusion;
mod knn;
mod laplacian;

pub use diffusion::{diffuse, diffuse_on_tape, sheaf_layer_on_tape, LayerVars, SheafLayer, SheafStack};
pub use knn::{cosine_similarity, knn_graph};
pub use laplacian::{build_for_graph, build_sheaf_laplacian, coboundary_dense, SheafLaplacian};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// The server's view of its clients: one node per client, KNN edges over
/// embedding similarity, and the stacked embeddings as node features.
#[derive(Debug, Clone)]
pub struct CollaborationGraph {
    pub num_clients: usize,
    /// Undirected, canonical `(lo, hi)`, no self-loops.
    pub edges: Vec<(usize, usize)>,
    /// `[num_clients x h]` graph-level embeddings.
    pub x0: Tensor,
}

impl CollaborationGraph {
    pub fn new(num_clients: usize, mut edges: Vec<(usize, usize)>, x0: Tensor) -> Result<Self> {
        if x0.shape().len() != 2 || x0.rows() != num_clients {
            return Err(Error::invalid(format!(
                "collaboration graph: embeddings {:?} do not match {num_clients} clients",
                x0.shape()
            )));
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 || e.0 >= num_clients || e.1 >= num_clients {
                return Err(Error::invalid(format!("collaboration graph: bad edge {e:?}")));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(CollaborationGraph {
            num_clients,
            edges,
            x0,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_clients];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}
