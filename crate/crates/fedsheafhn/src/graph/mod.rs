//! Graph storage, ingestion, synthesis, partitioning and splitting.

mod partition;
mod planetoid;
mod sbm;
mod splits;

pub use partition::{edge_cut, greedy_edge_cut, partition};
pub use planetoid::load_planetoid;
pub use sbm::sbm_generate;
pub use splits::split_masks;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// An undirected node-labeled graph with dense features.
///
/// Edges are stored deduplicated with endpoints ordered `(lo, hi)`;
/// self-loops are rejected at construction (the GCN adds its own).
#[derive(Debug, Clone)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        mut edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != num_nodes {
            return Err(Error::invalid(format!(
                "features must be [{num_nodes} x f], got {:?}",
                features.shape()
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::invalid(format!(
                "expected {num_nodes} labels, got {}",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::invalid(format!("self-loop at node {}", e.0)));
            }
            if e.0 >= num_nodes || e.1 >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) out of range for {num_nodes} nodes",
                    e.0, e.1
                )));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Graph {
            num_nodes,
            edges,
            features,
            labels,
            num_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbor lists in ascending order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// Symmetric-normalized adjacency with self-loops,
    /// `D^{-1/2} (A + I) D^{-1/2}`, as a dense matrix. Every node has
    /// degree at least one thanks to the self-loop.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.num_nodes;
        let mut deg = vec![1.0f64; n];
        for &(a, b) in &self.edges {
            deg[a] += 1.0;
            deg[b] += 1.0;
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut out = Tensor::zeros(&[n, n]);
        for (i, v) in inv_sqrt.iter().enumerate() {
            out.set(i, i, v * v);
        }
        for &(a, b) in &self.edges {
            let w = inv_sqrt[a] * inv_sqrt[b];
            out.set(a, b, w);
            out.set(b, a, w);
        }
        out
    }

    /// Subgraph induced by `nodes` (sorted, deduplicated by the caller);
    /// features and labels are restricted, edges relabeled to local indices.
    pub fn induced(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.num_nodes];
        for (li, &g) in nodes.iter().enumerate() {
            if g >= self.num_nodes {
                return Err(Error::invalid(format!("node {g} out of range")));
            }
            local[g] = li;
        }
        let f = self.feature_dim();
        let mut feat = Vec::with_capacity(nodes.len() * f);
        let mut labels = Vec::with_capacity(nodes.len());
        for &g in nodes {
            feat.extend_from_slice(self.features.row(g));
            labels.push(self.labels[g]);
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
            .map(|&(a, b)| (local[a], local[b]))
            .collect();
        Graph::new(
            nodes.len(),
            edges,
            Tensor::new(vec![nodes.len(), f], feat)?,
            labels,
            self.num_classes,
        )
    }
}

/// One client's share of the global graph, with train/val/test masks over
/// local node indices.
#[derive(Debug, Clone)]
pub struct GraphShard {
    pub client_id: usize,
    pub graph: Graph,
    /// Local index -> node id in the source graph.
    pub global_ids: Vec<usize>,
    pub train_mask: Vec<usize>,
    pub val_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
}

impl GraphShard {
    pub fn unmasked(client_id: usize, graph: Graph, global_ids: Vec<usize>) -> Self {
        GraphShard {
            client_id,
            graph,
            global_ids,
            train_mask: Vec::new(),
            val_mask: Vec::new(),
            test_mask: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    NonOverlapping,
    Overlapping,
}

/// How to split a graph into client shards.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_clients: usize,
    pub seed: u64,
    /// Overlapping only: number of disjoint base parts.
    pub base_parts: usize,
    /// Overlapping only: shards sampled from each base part.
    pub samples_per_part: usize,
}

impl PartitionSpec {
    pub fn non_overlapping(num_clients: usize, seed: u64) -> Self {
        PartitionSpec {
            mode: PartitionMode::NonOverlapping,
            num_clients,
            seed,
            base_parts: 0,
            samples_per_part: 0,
        }
    }

    /// Overlapping shards: five half-samples per base part, so
    /// `num_clients` must be a multiple of five.
    pub fn overlapping(num_clients: usize, seed: u64) -> Result<Self> {
        Self::overlapping_with(num_clients, 5, seed)
    }

    pub fn overlapping_with(num_clients: usize, samples_per_part: usize, seed: u64) -> Result<Self> {
        if samples_per_part == 0 || !num_clients.is_multiple_of(samples_per_part) {
            return Err(Error::invalid(format!(
                "num_clients {num_clients} must be a multiple of samples_per_part {samples_per_part}"
            )));
        }
        Ok(PartitionSpec {
            mode: PartitionMode::Overlapping,
            num_clients,
            seed,
            base_parts: num_clients / samples_per_part,
            samples_per_part,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph() -> Graph {
        Graph::new(
            3,
            vec![(0, 1), (1, 0), (1, 2)],
            Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(),
            vec![0, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn edges_are_deduplicated_and_canonical() {
        let g = tiny_graph();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn self_loop_rejected() {
        let r = Graph::new(
            2,
            vec![(0, 0)],
            Tensor::zeros(&[2, 1]),
            vec![0, 0],
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let r = Graph::new(1, vec![], Tensor::zeros(&[1, 1]), vec![3], 2);
        assert!(r.is_err());
    }

    #[test]
    fn normalized_adjacency_row_for_path_graph() {
        let g = tiny_graph();
        let a = g.normalized_adjacency();
        // Node 0 has degree 2 (self-loop + edge), node 1 degree 3.
        assert!((a.at(0, 0) - 0.5).abs() < 1e-12);
        assert!((a.at(0, 1) - 1.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(a.at(0, 2), 0.0);
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = tiny_graph();
        let s = g.induced(&[1, 2]).unwrap();
        assert_eq!(s.num_nodes, 2);
        assert_eq!(s.edges, vec![(0, 1)]);
        assert_eq!(s.labels, vec![1, 1]);
        assert_eq!(s.features.row(0), &[0.0, 1.0]);
    }
}
