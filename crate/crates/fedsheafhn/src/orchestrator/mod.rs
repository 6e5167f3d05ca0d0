//! The federated communication loop and its experiment variants.
//!
//! One round: (a) on refresh rounds, adopt the latest client embeddings and
//! rebuild the collaboration graph; (b) diffuse the embeddings through the
//! sheaf stack; (c) generate and dispatch per-client backbones; (d) clients
//! train locally and return backbone deltas (plus fresh embeddings on
//! refresh rounds); (e) the server backpropagates the delta surrogate and
//! steps its parameters. Baselines (local-only, FedAvg), ablation variants
//! and an embedding-mean strawman reuse the same loop skeleton.

mod attack;
mod new_clients;

pub use attack::{inject_malicious, AttackKind, AttackSpec};
pub use new_clients::{add_new_clients, NewClientReport};

use std::time::{Duration, Instant};

use crate::autodiff::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Tape, Tensor, Var};
use crate::client::{
    evaluate, local_train, ClientParams, ClientState, LocalTrainCfg, Split,
};
use crate::error::{Error, Result};
use crate::graph::GraphShard;
use crate::hypernet::{dropout_mask, generate_on_tape, HyperNet, HyperNetVars};
use crate::rng::{stream, STREAM_ATTACK, STREAM_CLIENT_INIT, STREAM_DROPOUT, STREAM_SERVER_INIT};
use crate::sheaf::{diffuse_on_tape, knn_graph, CollaborationGraph, LayerVars, SheafStack};

/// Hyperparameters of one federated run.
#[derive(Debug, Clone)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub client_lr: f64,
    pub theta_lr: f64,
    pub phi_lr: f64,
    pub hidden: usize,
    pub stalk_dim: usize,
    pub sheaf_layers: usize,
    pub sheaf_mlp_hidden: usize,
    pub hn_mlp_hidden: usize,
    pub hn_dropout: f64,
    /// 0 selects ceil(log2 N) at graph build time.
    pub knn_k: usize,
    pub refresh_interval: usize,
    pub seed: u64,
    pub client_opt: OptimizerKind,
    pub server_opt: OptimizerKind,
    pub attack: Option<AttackSpec>,
    /// L2 weight decay on the server optimizers.
    pub server_weight_decay: f64,
    /// Client-phase worker threads; 1 trains sequentially.
    pub workers: usize,
}

impl FedConfig {
    pub fn new(seed: u64) -> Self {
        FedConfig {
            rounds: 30,
            local_epochs: 3,
            client_lr: 0.02,
            theta_lr: 0.01,
            phi_lr: 0.02,
            hidden: 128,
            stalk_dim: 2,
            sheaf_layers: 2,
            sheaf_mlp_hidden: 20,
            hn_mlp_hidden: 128,
            hn_dropout: crate::hypernet::DEFAULT_DROPOUT,
            knn_k: 0,
            refresh_interval: 5,
            seed,
            client_opt: OptimizerKind::Sgd,
            server_opt: OptimizerKind::Adam,
            attack: None,
            server_weight_decay: 5e-4,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.refresh_interval == 0 {
            return Err(Error::invalid("refresh_interval must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs must be >= 1"));
        }
        if self.stalk_dim == 0 || !self.hidden.is_multiple_of(self.stalk_dim) {
            return Err(Error::invalid(format!(
                "hidden {} must be divisible by stalk_dim {}",
                self.hidden, self.stalk_dim
            )));
        }
        for (name, v) in [
            ("client_lr", self.client_lr),
            ("theta_lr", self.theta_lr),
            ("phi_lr", self.phi_lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn local_cfg(&self) -> LocalTrainCfg {
        LocalTrainCfg {
            epochs: self.local_epochs,
            lr: self.client_lr,
            optimizer: self.client_opt,
        }
    }

    pub fn effective_k(&self, num_clients: usize) -> usize {
        if num_clients < 2 {
            return 0;
        }
        let auto = usize::BITS as usize - (num_clients - 1).leading_zeros() as usize;
        let k = if self.knn_k == 0 { auto } else { self.knn_k };
        k.clamp(1, num_clients - 1)
    }
}

/// Which server pipeline produces the enriched descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// Sheaf diffusion plus attention hypernetwork.
    Full,
    /// Descriptors pass through untouched.
    NoSheaf,
    /// A two-layer GCN on the collaboration graph replaces the sheaf stack.
    GcnCollab,
    /// Full sheaf stack, hypernetwork without the attention layer.
    NoAttention,
    /// Embeddings frozen after round 0.
    StaticEmbedding,
    /// One-hot client ids instead of a collaboration graph; static.
    OnehotHn,
    /// Every descriptor replaced by the embedding mean; the aggregation
    /// strawman for robustness comparisons.
    EmbeddingMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    NoSheaf,
    GcnCollab,
    NoAttention,
    StaticEmbedding,
    OnehotHn,
}

impl AblationVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no_sheaf" => Some(AblationVariant::NoSheaf),
            "gcn_collab" => Some(AblationVariant::GcnCollab),
            "no_attention" => Some(AblationVariant::NoAttention),
            "static_embedding" => Some(AblationVariant::StaticEmbedding),
            "onehot_hn" => Some(AblationVariant::OnehotHn),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::NoSheaf => "no_sheaf",
            AblationVariant::GcnCollab => "gcn_collab",
            AblationVariant::NoAttention => "no_attention",
            AblationVariant::StaticEmbedding => "static_embedding",
            AblationVariant::OnehotHn => "onehot_hn",
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        match self {
            AblationVariant::NoSheaf => Pipeline::NoSheaf,
            AblationVariant::GcnCollab => Pipeline::GcnCollab,
            AblationVariant::NoAttention => Pipeline::NoAttention,
            AblationVariant::StaticEmbedding => Pipeline::StaticEmbedding,
            AblationVariant::OnehotHn => Pipeline::OnehotHn,
        }
    }
}

/// Two-layer GCN over the collaboration graph (ablation stand-in for the
/// sheaf stack).
#[derive(Debug, Clone)]
pub struct CollabGcn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl CollabGcn {
    fn init(hidden: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        CollabGcn {
            w1: crate::rng::glorot(hidden, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: crate::rng::glorot(hidden, hidden, rng),
            b2: Tensor::zeros(&[hidden]),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Everything the server owns across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub pipeline: Pipeline,
    pub sheaf: SheafStack,
    pub hn: HyperNet,
    pub collab_gcn: Option<CollabGcn>,
    /// Current collaboration graph (nodes = clients, features = X0).
    pub graph: CollaborationGraph,
    /// Latest embeddings received from clients, adopted at the next refresh.
    pub pending: Tensor,
    /// Next round index to execute.
    pub round: usize,
    pub theta_opt: Optimizer,
    pub phi_opt: Optimizer,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ServerState {
    pub fn x0(&self) -> &Tensor {
        &self.graph.x0
    }
}

/// Per-client metrics for one round.
#[derive(Debug, Clone)]
pub struct ClientRoundMetrics {
    pub client_id: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
}

/// One communication round's outcome.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    /// Mean of per-client test accuracies.
    pub federated_accuracy: f64,
    /// Population standard deviation of per-client test accuracies.
    pub accuracy_std: f64,
    pub surrogate_loss: f64,
    pub theta_grad_norm: f64,
    pub phi_grad_norm: f64,
    pub wall_time: Duration,
}

impl RoundReport {
    fn from_clients(
        round: usize,
        clients: Vec<ClientRoundMetrics>,
        surrogate_loss: f64,
        theta_grad_norm: f64,
        phi_grad_norm: f64,
        wall_time: Duration,
    ) -> Self {
        let n = clients.len().max(1) as f64;
        let mean = clients.iter().map(|c| c.test_acc).sum::<f64>() / n;
        let var = clients.iter().map(|c| (c.test_acc - mean).powi(2)).sum::<f64>() / n;
        RoundReport {
            round,
            clients,
            federated_accuracy: mean,
            accuracy_std: var.sqrt(),
            surrogate_loss,
            theta_grad_norm,
            phi_grad_norm,
            wall_time,
        }
    }
}

/// A trained system: clients plus (for server-driven methods) the server.
#[derive(Debug, Clone)]
pub struct World {
    pub clients: Vec<ClientState>,
    pub server: Option<ServerState>,
}

fn check_shards(shards: &[GraphShard]) -> Result<(usize, usize)> {
    let first = shards
        .first()
        .ok_or_else(|| Error::invalid("no client shards"))?;
    let f = first.graph.feature_dim();
    let c = first.graph.num_classes;
    for s in shards {
        if s.graph.feature_dim() != f || s.graph.num_classes != c {
            return Err(Error::invalid(format!(
                "shard {} disagrees on feature dim or classes",
                s.client_id
            )));
        }
    }
    Ok((f, c))
}

/// All clients start from one shared seeded initialization.
pub fn init_clients(shards: Vec<GraphShard>, cfg: &FedConfig, feature_dim: usize, num_classes: usize) -> Result<Vec<ClientState>> {
    let mut rng = stream(cfg.seed, &[STREAM_CLIENT_INIT]);
    let params = ClientParams::init(feature_dim, cfg.hidden, num_classes, &mut rng);
    shards
        .into_iter()
        .map(|s| ClientState::new(s, params.clone(), cfg.client_opt, cfg.client_lr))
        .collect()
}

struct ClientPhaseOutcome {
    metrics: ClientRoundMetrics,
    delta_backbone: Vec<f64>,
    embedding: Tensor,
}

/// Trains and evaluates every client, optionally injecting the dispatched
/// backbone row first. Fans out across `workers` threads; results are
/// joined in client order, so the thread count never changes the bits.
fn client_phase(
    clients: &mut [ClientState],
    backbones: Option<&Tensor>,
    cfg: &FedConfig,
) -> Result<Vec<ClientPhaseOutcome>> {
    let local = cfg.local_cfg();
    let run_one = |idx: usize, state: &mut ClientState| -> Result<ClientPhaseOutcome> {
        let injected: Option<Vec<f64>> = backbones.map(|b| b.row(idx).to_vec());
        let out = local_train(state, injected.as_deref(), &local)?;
        let metrics = ClientRoundMetrics {
            client_id: state.id,
            train_acc: evaluate(state, Split::Train)?,
            val_acc: evaluate(state, Split::Val)?,
            test_acc: evaluate(state, Split::Test)?,
            train_loss: out.train_loss,
        };
        Ok(ClientPhaseOutcome {
            metrics,
            delta_backbone: out.delta_backbone,
            embedding: out.embedding,
        })
    };

    let workers = cfg.workers.max(1).min(clients.len().max(1));
    if workers <= 1 {
        return clients
            .iter_mut()
            .enumerate()
            .map(|(i, s)| run_one(i, s))
            .collect();
    }

    let chunk = clients.len().div_ceil(workers);
    let mut results: Vec<Option<Result<ClientPhaseOutcome>>> = Vec::new();
    results.resize_with(clients.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (ci, chunk_states) in clients.chunks_mut(chunk).enumerate() {
            let base = ci * chunk;
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(chunk_states.len());
                for (off, state) in chunk_states.iter_mut().enumerate() {
                    out.push(run_one(base + off, state));
                }
                (base, out)
            }));
        }
        for h in handles {
            let (base, out) = h.join().expect("client worker panicked");
            for (off, r) in out.into_iter().enumerate() {
                results[base + off] = Some(r);
            }
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all client slots filled"))
        .collect()
}

fn server_optimizer(cfg: &FedConfig, lr: f64) -> Optimizer {
    let mut opt = Optimizer::new(cfg.server_opt, lr);
    opt.weight_decay = cfg.server_weight_decay;
    opt
}

fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, |t| t.numel());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r.data());
    }
    Tensor::new(vec![rows.len(), cols], data)
}

fn onehot_ids(n: usize, hidden: usize) -> Result<Tensor> {
    if n > hidden {
        return Err(Error::invalid(format!(
            "one-hot descriptors need hidden >= num_clients ({hidden} < {n})"
        )));
    }
    let mut t = Tensor::zeros(&[n, hidden]);
    for i in 0..n {
        t.set(i, i, 1.0);
    }
    Ok(t)
}

/// Normalized adjacency (with self-loops) of the collaboration graph.
fn collab_normalized_adjacency(g: &CollaborationGraph) -> Tensor {
    let n = g.num_clients;
    let mut deg = vec![1.0; n];
    for &(a, b) in &g.edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let inv: Vec<f64> = deg.iter().map(|d: &f64| 1.0 / d.sqrt()).collect();
    let mut out = Tensor::zeros(&[n, n]);
    for (i, v) in inv.iter().enumerate() {
        out.set(i, i, v * v);
    }
    for &(a, b) in &g.edges {
        out.set(a, b, inv[a] * inv[b]);
        out.set(b, a, inv[a] * inv[b]);
    }
    out
}

fn build_collaboration(x0: &Tensor, cfg: &FedConfig, pipeline: Pipeline) -> Result<CollaborationGraph> {
    let n = x0.rows();
    let needs_graph = !matches!(pipeline, Pipeline::OnehotHn | Pipeline::EmbeddingMean);
    if !needs_graph || n < 2 {
        return CollaborationGraph::new(n, Vec::new(), x0.clone());
    }
    knn_graph(x0, cfg.effective_k(n))
}

/// Server forward pass on a tape. Returns the generated `[N x P]` batch and
/// the parameter handles for the backward pass.
struct ServerForward {
    omega: Var,
    theta_vars: Vec<Var>,
    phi_vars: Vec<Var>,
}

fn server_forward(
    tape: &mut Tape,
    server: &ServerState,
    train: bool,
    dropout: Option<Tensor>,
) -> Result<ServerForward> {
    let n = server.graph.num_clients;
    let x0 = tape.constant(server.graph.x0.clone());
    let mut theta_vars = Vec::new();

    let enriched = match server.pipeline {
        Pipeline::Full | Pipeline::NoAttention | Pipeline::StaticEmbedding => {
            let layers: Vec<LayerVars> = server
                .sheaf
                .layers
                .iter()
                .map(|l| LayerVars::leaves(tape, l))
                .collect();
            for lv in &layers {
                theta_vars.extend(lv.all());
            }
            diffuse_on_tape(
                tape,
                x0,
                &server.graph.edges,
                &layers,
                n,
                server.sheaf.stalk_dim,
                server.sheaf.channels,
                server.sheaf.eps,
            )?
        }
        Pipeline::NoSheaf | Pipeline::OnehotHn => x0,
        Pipeline::GcnCollab => {
            let gcn = server
                .collab_gcn
                .as_ref()
                .ok_or_else(|| Error::invalid("gcn_collab pipeline without gcn weights"))?;
            let a_hat = tape.constant(collab_normalized_adjacency(&server.graph));
            let w1 = tape.leaf(gcn.w1.clone());
            let b1 = tape.leaf(gcn.b1.clone());
            let w2 = tape.leaf(gcn.w2.clone());
            let b2 = tape.leaf(gcn.b2.clone());
            theta_vars.extend([w1, b1, w2, b2]);
            let ax = tape.matmul(a_hat, x0)?;
            let h1 = tape.matmul(ax, w1)?;
            let h1 = tape.add_row(h1, b1)?;
            let h1 = tape.relu(h1)?;
            let ah = tape.matmul(a_hat, h1)?;
            let h2 = tape.matmul(ah, w2)?;
            tape.add_row(h2, b2)?
        }
        Pipeline::EmbeddingMean => {
            let mean = tape.mean_rows(x0)?;
            let mean = tape.reshape(mean, vec![1, server.graph.x0.cols()])?;
            let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
            tape.matmul(ones, mean)?
        }
    };

    let hn_vars = HyperNetVars::leaves(tape, &server.hn);
    let mask = if train && server.hn.dropout > 0.0 {
        Some(tape.constant(dropout.ok_or_else(|| Error::invalid("training pass needs a dropout mask"))?))
    } else {
        None
    };
    let use_attention = server.pipeline != Pipeline::NoAttention;
    let omega = generate_on_tape(tape, enriched, &hn_vars, mask, use_attention)?;
    Ok(ServerForward {
        omega,
        theta_vars,
        phi_vars: hn_vars.all().to_vec(),
    })
}

/// Evaluation-mode generation for the current server state.
pub fn generate_backbones(server: &ServerState) -> Result<Tensor> {
    let mut tape = Tape::new();
    let fwd = server_forward(&mut tape, server, false, None)?;
    Ok(tape.value(fwd.omega).clone())
}

fn grad_norm(grads: &crate::autodiff::Gradients, vars: &[Var]) -> f64 {
    vars.iter()
        .map(|&v| {
            let g = grads.wrt(v);
            g.data().iter().map(|x| x * x).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

fn collect_embeddings(outcomes: &[ClientPhaseOutcome]) -> Result<Tensor> {
    let rows: Vec<Tensor> = outcomes.iter().map(|o| o.embedding.clone()).collect();
    stack_rows(&rows)
}

/// Scales every embedding row to unit L2 norm (zero rows stay zero).
/// Honest clients transmit unit-norm descriptors: client activations grow
/// steadily as training sharpens, and without this the generated-backbone
/// -> activation -> embedding loop inflates the descriptor scale at every
/// refresh until the attention scores saturate and the run destabilizes.
/// Cosine KNN is unaffected. Malicious rows are injected after this step,
/// so an attacker is not bound by the protocol.
pub fn normalize_rows(t: &Tensor) -> Tensor {
    let (n, h) = (t.rows(), t.cols());
    let mut out = t.clone();
    for i in 0..n {
        let norm: f64 = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..h {
                out.set(i, j, t.at(i, j) / norm);
            }
        }
    }
    out
}

fn apply_attack(embeddings: Tensor, cfg: &FedConfig, collection: u64) -> Tensor {
    match &cfg.attack {
        None => embeddings,
        Some(spec) => {
            let mut rng = stream(cfg.seed, &[STREAM_ATTACK, collection]);
            inject_malicious(&embeddings, spec.ratio, spec.kind, spec.tau, &mut rng)
        }
    }
}

/// Builds the initial world for a server-driven method: shared client init,
/// server model init, and the initialization round that produces the first
/// embeddings. No communication round has run yet.
pub fn prepare_server_driven(
    shards: Vec<GraphShard>,
    cfg: &FedConfig,
    pipeline: Pipeline,
) -> Result<World> {
    cfg.validate()?;
    let (f, c) = check_shards(&shards)?;
    let n = shards.len();
    let mut clients = init_clients(shards, cfg, f, c)?;
    let backbone_len = ClientParams::backbone_len(f, cfg.hidden);

    let mut server_rng = stream(cfg.seed, &[STREAM_SERVER_INIT]);
    let sheaf = SheafStack::init(
        cfg.hidden,
        cfg.stalk_dim,
        cfg.sheaf_layers,
        cfg.sheaf_mlp_hidden,
        &mut server_rng,
    )?;
    let hn = HyperNet::init(
        cfg.hidden,
        cfg.hn_mlp_hidden,
        backbone_len,
        cfg.hn_dropout,
        &mut server_rng,
    )?;
    let collab_gcn = (pipeline == Pipeline::GcnCollab).then(|| CollabGcn::init(cfg.hidden, &mut server_rng));

    // Initialization round: every client trains once from the shared init
    // and transmits its embedding.
    let init_outcomes = client_phase(&mut clients, None, cfg).map_err(|e| e.in_round(0))?;
    let pending = apply_attack(normalize_rows(&collect_embeddings(&init_outcomes)?), cfg, 0);

    let placeholder = CollaborationGraph::new(n, Vec::new(), pending.clone())?;
    let server = ServerState {
        pipeline,
        sheaf,
        hn,
        collab_gcn,
        graph: placeholder,
        pending,
        round: 0,
        theta_opt: server_optimizer(cfg, cfg.theta_lr),
        phi_opt: server_optimizer(cfg, cfg.phi_lr),
        feature_dim: f,
        num_classes: c,
    };
    Ok(World {
        clients,
        server: Some(server),
    })
}

/// Executes the world's next communication round.
pub fn step_round(world: &mut World, cfg: &FedConfig) -> Result<RoundReport> {
    let server = world
        .server
        .as_mut()
        .ok_or_else(|| Error::invalid("step_round: world has no server"))?;
    let r = server.round;
    run_round(server, &mut world.clients, cfg, r).map_err(|e| e.in_round(r))
}

fn run_server_driven(
    shards: Vec<GraphShard>,
    cfg: &FedConfig,
    pipeline: Pipeline,
) -> Result<(Vec<RoundReport>, World)> {
    let mut world = prepare_server_driven(shards, cfg, pipeline)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        reports.push(step_round(&mut world, cfg)?);
    }
    Ok((reports, world))
}

pub(crate) fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    r: usize,
) -> Result<RoundReport> {
    let started = Instant::now();
    let n = clients.len();
    let static_pipeline = matches!(
        server.pipeline,
        Pipeline::StaticEmbedding | Pipeline::OnehotHn
    );
    let refresh = r.is_multiple_of(cfg.refresh_interval) && (!static_pipeline || r == 0);
    if refresh {
        let x0 = if server.pipeline == Pipeline::OnehotHn {
            onehot_ids(n, cfg.hidden)?
        } else {
            server.pending.clone()
        };
        server.graph = build_collaboration(&x0, cfg, server.pipeline)?;
    }

    // Dispatch pass: deterministic generation, dropout off.
    let dispatched = generate_backbones(server)?;

    let outcomes = client_phase(clients, Some(&dispatched), cfg)?;
    if refresh && !static_pipeline {
        server.pending = apply_attack(normalize_rows(&collect_embeddings(&outcomes)?), cfg, 1 + r as u64);
    }

    // The server descends on <omega, dispatched - trained>: pushing the
    // generated batch toward where the clients moved it.
    let mut delta = Vec::with_capacity(n * dispatched.cols());
    for o in &outcomes {
        delta.extend(o.delta_backbone.iter().map(|d| -d));
    }
    let delta = Tensor::new(vec![n, dispatched.cols()], delta)?;

    let mut tape = Tape::new();
    let mask = if server.hn.dropout > 0.0 {
        let mut rng = stream(cfg.seed, &[STREAM_DROPOUT, r as u64]);
        Some(dropout_mask(&[n, cfg.hidden], server.hn.dropout, &mut rng))
    } else {
        None
    };
    let fwd = server_forward(&mut tape, server, true, mask)?;
    let delta_var = tape.constant(delta);
    let loss = tape.inner(fwd.omega, delta_var)?;
    let surrogate_loss = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let theta_grad_norm = grad_norm(&grads, &fwd.theta_vars);
    let phi_grad_norm = grad_norm(&grads, &fwd.phi_vars);

    let theta_grads: Vec<Tensor> = fwd.theta_vars.iter().map(|&v| grads.wrt(v)).collect();
    match server.pipeline {
        Pipeline::Full | Pipeline::NoAttention | Pipeline::StaticEmbedding => {
            let mut params = server.sheaf.params_mut();
            server.theta_opt.step(&mut params, &theta_grads)?;
        }
        Pipeline::GcnCollab => {
            let gcn = server.collab_gcn.as_mut().expect("gcn weights exist");
            let mut params = gcn.params_mut();
            server.theta_opt.step(&mut params, &theta_grads)?;
        }
        Pipeline::NoSheaf | Pipeline::OnehotHn | Pipeline::EmbeddingMean => {}
    }
    let phi_grads: Vec<Tensor> = fwd.phi_vars.iter().map(|&v| grads.wrt(v)).collect();
    {
        let mut params = server.hn.params_mut();
        server.phi_opt.step(&mut params, &phi_grads)?;
    }
    server.round = r + 1;

    let metrics = outcomes.into_iter().map(|o| o.metrics).collect();
    Ok(RoundReport::from_clients(
        r,
        metrics,
        surrogate_loss,
        theta_grad_norm,
        phi_grad_norm,
        started.elapsed(),
    ))
}

/// The full pipeline: sheaf collaboration plus attention hypernetwork.
pub fn run_fedsheafhn(shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<(Vec<RoundReport>, World)> {
    run_server_driven(shards, cfg, Pipeline::Full)
}

/// Continues a restored run up to `total_rounds`, starting at the server's
/// recorded next round.
pub fn resume_rounds(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    total_rounds: usize,
) -> Result<Vec<RoundReport>> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for r in server.round..total_rounds {
        let report = run_round(server, clients, cfg, r).map_err(|e| e.in_round(r))?;
        reports.push(report);
    }
    Ok(reports)
}

/// One ablation variant of the full pipeline.
pub fn run_ablation(
    shards: Vec<GraphShard>,
    cfg: &FedConfig,
    variant: AblationVariant,
) -> Result<(Vec<RoundReport>, World)> {
    run_server_driven(shards, cfg, variant.pipeline())
}

/// Robustness strawman: descriptors collapse to the embedding mean before
/// the hypernetwork, so every client receives the same backbone.
pub fn run_embedding_mean(shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<(Vec<RoundReport>, World)> {
    run_server_driven(shards, cfg, Pipeline::EmbeddingMean)
}

/// Each client trains alone; no communication.
pub fn run_local_only(shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<(Vec<RoundReport>, World)> {
    cfg.validate()?;
    let (f, c) = check_shards(&shards)?;
    let mut clients = init_clients(shards, cfg, f, c)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let started = Instant::now();
        let outcomes = client_phase(&mut clients, None, cfg).map_err(|e| e.in_round(r))?;
        let metrics = outcomes.into_iter().map(|o| o.metrics).collect();
        reports.push(RoundReport::from_clients(r, metrics, 0.0, 0.0, 0.0, started.elapsed()));
    }
    Ok((reports, World { clients, server: None }))
}

/// FedAvg: per round, clients train locally, then the server replaces all
/// parameters with the node-count-weighted mean, visible from the next
/// round on.
pub fn run_fedavg(shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<(Vec<RoundReport>, World)> {
    cfg.validate()?;
    let (f, c) = check_shards(&shards)?;
    let mut clients = init_clients(shards, cfg, f, c)?;
    let mut global: Option<Vec<f64>> = None;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let started = Instant::now();
        if let Some(g) = &global {
            for state in clients.iter_mut() {
                state.replace_params(g).map_err(|e| e.in_round(r))?;
            }
        }
        let outcomes = client_phase(&mut clients, None, cfg).map_err(|e| e.in_round(r))?;
        global = Some(weighted_mean_params(&clients));
        let metrics = outcomes.into_iter().map(|o| o.metrics).collect();
        reports.push(RoundReport::from_clients(r, metrics, 0.0, 0.0, 0.0, started.elapsed()));
    }
    Ok((reports, World { clients, server: None }))
}

/// Node-count-weighted mean of all client parameter vectors.
pub fn weighted_mean_params(clients: &[ClientState]) -> Vec<f64> {
    let total: usize = clients.iter().map(|c| c.shard.num_nodes()).sum();
    let dim = clients[0].params.pack_all().len();
    let mut mean = vec![0.0; dim];
    for state in clients {
        let w = state.shard.num_nodes() as f64 / total as f64;
        for (m, p) in mean.iter_mut().zip(state.params.pack_all()) {
            *m += w * p;
        }
    }
    mean
}

/// Least-squares slope of `ys` against round indices; the monitored
/// stand-in for the gradient-norm convergence trend.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mean_x = (ys.len() - 1) as f64 / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

#[cfg(test)]
mod tests;
