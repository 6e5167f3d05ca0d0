//! Generalization to clients that join after training, with the server
//! models frozen.
//!
//! Each new client trains locally once to produce its embedding (one
//! communication round), the server attaches it to the frozen collaboration
//! graph by KNN over the existing embeddings, re-diffuses, and generates
//! its backbone; the new client then trains only its head and is evaluated.

use crate::autodiff::Tensor;
use crate::client::{
    evaluate, local_train, train_head_only, ClientParams, ClientState, LocalTrainCfg, Split,
};
use crate::error::{Error, Result};
use crate::graph::GraphShard;
use crate::rng::{stream, STREAM_CLIENT_INIT};
use crate::sheaf::{cosine_similarity, CollaborationGraph};

use super::{generate_backbones, FedConfig, ServerState};

#[derive(Debug, Clone)]
pub struct NewClientReport {
    /// Test accuracy per new client, in input order.
    pub accuracies: Vec<f64>,
    /// Generated backbones for all nodes of the augmented graph
    /// (existing clients first, then the new ones).
    pub generated: Tensor,
    /// The trained new-client states (heads fitted, backbones generated).
    pub clients: Vec<ClientState>,
}

impl NewClientReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }
}

/// Runs the frozen-server protocol for `new_shards`. The server state is
/// only read; its parameters stay bitwise untouched.
pub fn add_new_clients(
    server: &ServerState,
    new_shards: Vec<GraphShard>,
    cfg: &FedConfig,
) -> Result<NewClientReport> {
    if new_shards.is_empty() {
        return Err(Error::invalid("add_new_clients: no new shards"));
    }
    if server.round == 0 {
        return Err(Error::invalid("add_new_clients: server has not trained yet"));
    }
    let local = LocalTrainCfg {
        epochs: cfg.local_epochs,
        lr: cfg.client_lr,
        optimizer: cfg.client_opt,
    };

    // New clients start from the same shared init as training clients and
    // run one local round to produce their embeddings.
    let mut init_rng = stream(cfg.seed, &[STREAM_CLIENT_INIT]);
    let params = ClientParams::init(server.feature_dim, cfg.hidden, server.num_classes, &mut init_rng);
    let mut fresh: Vec<ClientState> = new_shards
        .into_iter()
        .map(|s| ClientState::new(s, params.clone(), cfg.client_opt, cfg.client_lr))
        .collect::<Result<_>>()?;
    let mut embeddings = Vec::with_capacity(fresh.len());
    for state in fresh.iter_mut() {
        let out = local_train(state, None, &local)?;
        // New clients follow the same unit-norm transmission protocol.
        let row = Tensor::new(vec![1, out.embedding.numel()], out.embedding.data().to_vec())?;
        let row = super::normalize_rows(&row);
        embeddings.push(Tensor::new(vec![row.cols()], row.data().to_vec())?);
    }

    // Attach each new node to its top-K existing clients; the existing
    // edges are kept as they are.
    let x0 = server.x0();
    let n = x0.rows();
    let h = x0.cols();
    let k = cfg.effective_k(n + fresh.len()).min(n).max(1);
    let mut rows = Vec::with_capacity((n + fresh.len()) * h);
    rows.extend_from_slice(x0.data());
    for e in &embeddings {
        rows.extend_from_slice(e.data());
    }
    let augmented_x0 = Tensor::new(vec![n + fresh.len(), h], rows)?;
    let mut edges = server.graph.edges.clone();
    for (j, emb) in embeddings.iter().enumerate() {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .map(|i| (i, cosine_similarity(emb.data(), x0.row(i))))
            .collect();
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(i, _) in candidates.iter().take(k) {
            edges.push((i, n + j));
        }
    }

    let mut frozen = server.clone();
    frozen.graph = CollaborationGraph::new(n + fresh.len(), edges, augmented_x0)?;
    let generated = generate_backbones(&frozen)?;

    // Each new client adopts its generated backbone and fits only the head.
    let mut accuracies = Vec::with_capacity(fresh.len());
    for (j, state) in fresh.iter_mut().enumerate() {
        state.params.set_backbone(generated.row(n + j))?;
        train_head_only(state, &local)?;
        accuracies.push(evaluate(state, Split::Test)?);
    }

    Ok(NewClientReport {
        accuracies,
        generated,
        clients: fresh,
    })
}
