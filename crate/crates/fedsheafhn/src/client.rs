//! Per-client two-layer GCN: local training, evaluation, and the
//! graph-level embedding transmitted to the server.
//!
//! A client model splits into the backbone (layer-1 weight and bias, the
//! part the server generates) and the head (layer-2 classifier, always
//! trained locally). Backbones cross the wire as flat vectors in a fixed
//! packing order: weight row-major, then bias.

use crate::autodiff::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphShard;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Two-layer GCN parameters.
#[derive(Debug, Clone)]
pub struct ClientParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ClientParams {
    pub fn init(feature_dim: usize, hidden: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ClientParams {
            w1: crate::rng::glorot(feature_dim, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: crate::rng::glorot(hidden, num_classes, rng),
            b2: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }

    /// Flat length of a packed backbone for the given dimensions.
    pub fn backbone_len(feature_dim: usize, hidden: usize) -> usize {
        feature_dim * hidden + hidden
    }

    pub fn pack_backbone(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.numel() + self.b1.numel());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(self.b1.data());
        out
    }

    pub fn set_backbone(&mut self, flat: &[f64]) -> Result<()> {
        let (wn, bn) = (self.w1.numel(), self.b1.numel());
        if flat.len() != wn + bn {
            return Err(Error::ShapeMismatch {
                op: "set_backbone",
                expected: format!("{} values", wn + bn),
                got: format!("{}", flat.len()),
            });
        }
        self.w1.data_mut().copy_from_slice(&flat[..wn]);
        self.b1.data_mut().copy_from_slice(&flat[wn..]);
        Ok(())
    }

    pub fn pack_head(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w2.numel() + self.b2.numel());
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(self.b2.data());
        out
    }

    pub fn set_head(&mut self, flat: &[f64]) -> Result<()> {
        let (wn, bn) = (self.w2.numel(), self.b2.numel());
        if flat.len() != wn + bn {
            return Err(Error::ShapeMismatch {
                op: "set_head",
                expected: format!("{} values", wn + bn),
                got: format!("{}", flat.len()),
            });
        }
        self.w2.data_mut().copy_from_slice(&flat[..wn]);
        self.b2.data_mut().copy_from_slice(&flat[wn..]);
        Ok(())
    }

    pub fn pack_all(&self) -> Vec<f64> {
        let mut out = self.pack_backbone();
        out.extend(self.pack_head());
        out
    }

    pub fn set_all(&mut self, flat: &[f64]) -> Result<()> {
        let bl = self.w1.numel() + self.b1.numel();
        if flat.len() != bl + self.w2.numel() + self.b2.numel() {
            return Err(Error::invalid("set_all: wrong flat length"));
        }
        self.set_backbone(&flat[..bl])?;
        self.set_head(&flat[bl..])
    }
}

/// A client's full local state across communication rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: GraphShard,
    pub params: ClientParams,
    /// Cached symmetric-normalized adjacency with self-loops.
    pub a_hat: Tensor,
    /// Cached `a_hat * features`; both factors are constant.
    pub av: Tensor,
    /// Latest graph-level embedding, refreshed by `local_train`.
    pub embedding: Tensor,
    head_opt: Optimizer,
    backbone_opt: Optimizer,
}

impl ClientState {
    pub fn new(shard: GraphShard, params: ClientParams, optimizer: OptimizerKind, lr: f64) -> Result<Self> {
        if shard.graph.feature_dim() != params.feature_dim() {
            return Err(Error::ShapeMismatch {
                op: "ClientState::new",
                expected: format!("{} features", params.feature_dim()),
                got: format!("{}", shard.graph.feature_dim()),
            });
        }
        let a_hat = shard.graph.normalized_adjacency();
        let av = a_hat.matmul(&shard.graph.features)?;
        let hidden = params.hidden_dim();
        Ok(ClientState {
            id: shard.client_id,
            shard,
            params,
            a_hat,
            av,
            embedding: Tensor::zeros(&[hidden]),
            head_opt: Optimizer::new(optimizer, lr),
            backbone_opt: Optimizer::new(optimizer, lr),
        })
    }

    /// Replace all parameters (FedAvg-style injection); optimizer moments
    /// are stale for the new values, so both are reset.
    pub fn replace_params(&mut self, flat: &[f64]) -> Result<()> {
        self.params.set_all(flat)?;
        let kind = self.head_opt.kind;
        let lr = self.head_opt.lr;
        self.head_opt = Optimizer::new(kind, lr);
        self.backbone_opt = Optimizer::new(kind, lr);
        Ok(())
    }

    pub fn optimizers(&self) -> (&Optimizer, &Optimizer) {
        (&self.head_opt, &self.backbone_opt)
    }

    pub fn set_optimizers(&mut self, head: Optimizer, backbone: Optimizer) {
        self.head_opt = head;
        self.backbone_opt = backbone;
    }
}

pub struct LocalTrainCfg {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

pub struct LocalOutcome {
    /// Trained backbone minus the backbone the round started from.
    pub delta_backbone: Vec<f64>,
    /// Graph-level embedding after training.
    pub embedding: Tensor,
    /// Training loss at the last epoch's forward pass.
    pub train_loss: f64,
}

/// Builds the GCN forward pass on a tape; returns (hidden, logits).
fn gcn_on_tape(
    tape: &mut Tape,
    a_hat: Var,
    av: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<(Var, Var)> {
    let pre = tape.matmul(av, w1)?;
    let pre = tape.add_row(pre, b1)?;
    let hidden = tape.relu(pre)?;
    let agg = tape.matmul(a_hat, hidden)?;
    let out = tape.matmul(agg, w2)?;
    let logits = tape.add_row(out, b2)?;
    Ok((hidden, logits))
}

/// Plain forward pass; mirrors the tape ops exactly so evaluation and
/// training see identical bits.
pub fn gcn_forward(state: &ClientState) -> Result<(Tensor, Tensor)> {
    gcn_forward_with(state, &state.params)
}

pub fn gcn_forward_with(state: &ClientState, params: &ClientParams) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let a_hat = tape.constant(state.a_hat.clone());
    let av = tape.constant(state.av.clone());
    let w1 = tape.constant(params.w1.clone());
    let b1 = tape.constant(params.b1.clone());
    let w2 = tape.constant(params.w2.clone());
    let b2 = tape.constant(params.b2.clone());
    let (hidden, logits) = gcn_on_tape(&mut tape, a_hat, av, w1, b1, w2, b2)?;
    Ok((tape.value(hidden).clone(), tape.value(logits).clone()))
}

/// Arithmetic mean of the rows of `hidden`; the client's descriptor.
pub fn mean_pool(hidden: &Tensor) -> Result<Tensor> {
    if !hidden.is_matrix() || hidden.rows() == 0 {
        return Err(Error::invalid("mean_pool: need a non-empty matrix"));
    }
    let (rows, cols) = (hidden.rows(), hidden.cols());
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for (o, &x) in out.iter_mut().zip(hidden.row(i)) {
            *o += x;
        }
    }
    for o in out.iter_mut() {
        *o /= rows as f64;
    }
    Tensor::new(vec![cols], out)
}

/// Runs `epochs` full-batch gradient steps on the masked training
/// cross-entropy, starting from `backbone_in` when the server dispatched
/// one. The head always continues from its previous value.
pub fn local_train(
    state: &mut ClientState,
    backbone_in: Option<&[f64]>,
    cfg: &LocalTrainCfg,
) -> Result<LocalOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("local_train: epochs must be >= 1"));
    }
    if state.shard.train_mask.is_empty() {
        return Err(Error::invalid(format!(
            "local_train: client {} has an empty train mask",
            state.id
        )));
    }
    if let Some(flat) = backbone_in {
        state.params.set_backbone(flat)?;
        // The injected backbone is a new point; stale moments would steer it.
        state.backbone_opt = Optimizer::new(cfg.optimizer, cfg.lr);
    }
    state.head_opt.lr = cfg.lr;
    state.backbone_opt.lr = cfg.lr;
    let start_backbone = state.params.pack_backbone();

    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let a_hat = tape.constant(state.a_hat.clone());
        let av = tape.constant(state.av.clone());
        let w1 = tape.leaf(state.params.w1.clone());
        let b1 = tape.leaf(state.params.b1.clone());
        let w2 = tape.leaf(state.params.w2.clone());
        let b2 = tape.leaf(state.params.b2.clone());
        let (_hidden, logits) = gcn_on_tape(&mut tape, a_hat, av, w1, b1, w2, b2)?;
        let loss = tape.masked_cross_entropy(logits, &state.shard.graph.labels, &state.shard.train_mask)?;
        last_loss = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        state.backbone_opt.step(
            &mut [&mut state.params.w1, &mut state.params.b1],
            &[grads.wrt(w1), grads.wrt(b1)],
        )?;
        state.head_opt.step(
            &mut [&mut state.params.w2, &mut state.params.b2],
            &[grads.wrt(w2), grads.wrt(b2)],
        )?;
    }

    let trained = state.params.pack_backbone();
    let delta_backbone: Vec<f64> = trained
        .iter()
        .zip(&start_backbone)
        .map(|(a, b)| a - b)
        .collect();
    // Canonicalize the backbone to start + delta so the transmitted delta
    // reconstructs the trained value exactly (at most one ulp of drift).
    let canonical: Vec<f64> = start_backbone
        .iter()
        .zip(&delta_backbone)
        .map(|(s, d)| s + d)
        .collect();
    state.params.set_backbone(&canonical)?;

    let (hidden, _) = gcn_forward(state)?;
    let embedding = mean_pool(&hidden)?;
    state.embedding = embedding.clone();

    Ok(LocalOutcome {
        delta_backbone,
        embedding,
        train_loss: last_loss,
    })
}

/// Like `local_train`, but only the head moves; the backbone stays at its
/// (typically server-generated) value. Used by the new-client protocol.
pub fn train_head_only(state: &mut ClientState, cfg: &LocalTrainCfg) -> Result<f64> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("train_head_only: epochs must be >= 1"));
    }
    if state.shard.train_mask.is_empty() {
        return Err(Error::invalid(format!(
            "train_head_only: client {} has an empty train mask",
            state.id
        )));
    }
    state.head_opt.lr = cfg.lr;
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let a_hat = tape.constant(state.a_hat.clone());
        let av = tape.constant(state.av.clone());
        let w1 = tape.constant(state.params.w1.clone());
        let b1 = tape.constant(state.params.b1.clone());
        let w2 = tape.leaf(state.params.w2.clone());
        let b2 = tape.leaf(state.params.b2.clone());
        let (_, logits) = gcn_on_tape(&mut tape, a_hat, av, w1, b1, w2, b2)?;
        let loss = tape.masked_cross_entropy(logits, &state.shard.graph.labels, &state.shard.train_mask)?;
        last_loss = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        state.head_opt.step(
            &mut [&mut state.params.w2, &mut state.params.b2],
            &[grads.wrt(w2), grads.wrt(b2)],
        )?;
    }
    Ok(last_loss)
}

/// Argmax accuracy over a mask; ties resolve to the lowest class index.
pub fn evaluate(state: &ClientState, split: Split) -> Result<f64> {
    let mask = match split {
        Split::Train => &state.shard.train_mask,
        Split::Val => &state.shard.val_mask,
        Split::Test => &state.shard.test_mask,
    };
    if mask.is_empty() {
        return Err(Error::invalid(format!(
            "evaluate: empty {split:?} mask on client {}",
            state.id
        )));
    }
    let (_, logits) = gcn_forward(state)?;
    let mut correct = 0usize;
    for &i in mask {
        if argmax_lowest(logits.row(i)) == state.shard.graph.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
