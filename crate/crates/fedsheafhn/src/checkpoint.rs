//! Versioned binary checkpoints.
//!
//! Layout: magic `FSHN1`, a little-endian u32 format version, then the full
//! resumable training state — server models and optimizer moments,
//! collaboration graph, pending embeddings, round counter, and every
//! client's parameters and optimizer state. All floats are little-endian
//! f64 with explicit shape headers. Shard data is not stored; it is
//! rebuilt deterministically from the run config and seed.

use std::path::Path;

use crate::autodiff::optim::{AdamState, Optimizer, OptimizerKind};
use crate::autodiff::Tensor;
use crate::client::{ClientParams, ClientState};
use crate::error::{Error, Result};
use crate::graph::GraphShard;
use crate::hypernet::HyperNet;
use crate::orchestrator::{CollabGcn, FedConfig, Pipeline, ServerState, World};
use crate::sheaf::{CollaborationGraph, SheafLayer, SheafStack};

pub const MAGIC: &[u8; 5] = b"FSHN1";
pub const VERSION: u32 = 1;

/// A client's portable state (everything except its shard).
#[derive(Debug, Clone)]
pub struct ClientCore {
    pub id: usize,
    pub params: ClientParams,
    pub head_opt: Optimizer,
    pub backbone_opt: Optimizer,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }

    fn optimizer(&mut self, o: &Optimizer) {
        self.u8(match o.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        });
        self.f64(o.lr);
        self.f64(o.beta1);
        self.f64(o.beta2);
        self.f64(o.eps);
        self.f64(o.weight_decay);
        match &o.state {
            None => self.u8(0),
            Some(s) => {
                self.u8(1);
                self.u64(s.t);
                self.u64(s.m.len() as u64);
                for t in &s.m {
                    self.tensor(t);
                }
                for t in &s.v {
                    self.tensor(t);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u64()? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::new(shape, data)
    }

    fn optimizer(&mut self) -> Result<Optimizer> {
        let kind = match self.u8()? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            k => return Err(Error::Checkpoint(format!("unknown optimizer tag {k}"))),
        };
        let mut o = Optimizer::new(kind, 0.0);
        o.lr = self.f64()?;
        o.beta1 = self.f64()?;
        o.beta2 = self.f64()?;
        o.eps = self.f64()?;
        o.weight_decay = self.f64()?;
        if self.u8()? == 1 {
            let t = self.u64()?;
            let count = self.u64()? as usize;
            let mut m = Vec::with_capacity(count);
            for _ in 0..count {
                m.push(self.tensor()?);
            }
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                v.push(self.tensor()?);
            }
            o.state = Some(AdamState { t, m, v });
        }
        Ok(o)
    }
}

fn pipeline_tag(p: Pipeline) -> u8 {
    match p {
        Pipeline::Full => 0,
        Pipeline::NoSheaf => 1,
        Pipeline::GcnCollab => 2,
        Pipeline::NoAttention => 3,
        Pipeline::StaticEmbedding => 4,
        Pipeline::OnehotHn => 5,
        Pipeline::EmbeddingMean => 6,
    }
}

fn pipeline_from(tag: u8) -> Result<Pipeline> {
    Ok(match tag {
        0 => Pipeline::Full,
        1 => Pipeline::NoSheaf,
        2 => Pipeline::GcnCollab,
        3 => Pipeline::NoAttention,
        4 => Pipeline::StaticEmbedding,
        5 => Pipeline::OnehotHn,
        6 => Pipeline::EmbeddingMean,
        t => return Err(Error::Checkpoint(format!("unknown pipeline tag {t}"))),
    })
}

pub fn save(path: &Path, server: &ServerState, clients: &[ClientState]) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(server.round as u64);
    w.u8(pipeline_tag(server.pipeline));
    w.u64(server.feature_dim as u64);
    w.u64(server.num_classes as u64);

    // Sheaf stack.
    w.u64(server.sheaf.stalk_dim as u64);
    w.u64(server.sheaf.channels as u64);
    w.f64(server.sheaf.eps);
    w.u64(server.sheaf.layers.len() as u64);
    for layer in &server.sheaf.layers {
        for t in [&layer.mlp_w1, &layer.mlp_b1, &layer.mlp_w2, &layer.mlp_b2, &layer.w1, &layer.w2] {
            w.tensor(t);
        }
    }

    // Hypernetwork.
    w.f64(server.hn.dropout);
    for t in server.hn.params() {
        w.tensor(t);
    }

    // Collaboration-graph GCN (ablation variant weights).
    match &server.collab_gcn {
        None => w.u8(0),
        Some(g) => {
            w.u8(1);
            for t in g.params() {
                w.tensor(t);
            }
        }
    }

    w.optimizer(&server.theta_opt);
    w.optimizer(&server.phi_opt);

    // Collaboration graph and pending embeddings.
    w.u64(server.graph.num_clients as u64);
    w.u64(server.graph.edges.len() as u64);
    for &(a, b) in &server.graph.edges {
        w.u64(a as u64);
        w.u64(b as u64);
    }
    w.tensor(&server.graph.x0);
    w.tensor(&server.pending);

    // Clients.
    w.u64(clients.len() as u64);
    for c in clients {
        w.u64(c.id as u64);
        for t in [&c.params.w1, &c.params.b1, &c.params.w2, &c.params.b2] {
            w.tensor(t);
        }
        let (head, backbone) = c.optimizers();
        w.optimizer(head);
        w.optimizer(backbone);
    }

    std::fs::write(path, &w.buf)?;
    Ok(())
}

/// Reads a checkpoint back into a server state plus portable client cores.
pub fn load(path: &Path) -> Result<(ServerState, Vec<ClientCore>)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf);
    if r.take(5)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let round = r.u64()? as usize;
    let pipeline = pipeline_from(r.u8()?)?;
    let feature_dim = r.u64()? as usize;
    let num_classes = r.u64()? as usize;

    let stalk_dim = r.u64()? as usize;
    let channels = r.u64()? as usize;
    let eps = r.f64()?;
    let num_layers = r.u64()? as usize;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        layers.push(SheafLayer {
            mlp_w1: r.tensor()?,
            mlp_b1: r.tensor()?,
            mlp_w2: r.tensor()?,
            mlp_b2: r.tensor()?,
            w1: r.tensor()?,
            w2: r.tensor()?,
        });
    }
    let sheaf = SheafStack {
        stalk_dim,
        channels,
        layers,
        eps,
    };

    let dropout = r.f64()?;
    let hn = HyperNet {
        aq: r.tensor()?,
        ak: r.tensor()?,
        av: r.tensor()?,
        mlp_w1: r.tensor()?,
        mlp_b1: r.tensor()?,
        mlp_w2: r.tensor()?,
        mlp_b2: r.tensor()?,
        dropout,
    };

    let collab_gcn = if r.u8()? == 1 {
        Some(CollabGcn {
            w1: r.tensor()?,
            b1: r.tensor()?,
            w2: r.tensor()?,
            b2: r.tensor()?,
        })
    } else {
        None
    };

    let theta_opt = r.optimizer()?;
    let phi_opt = r.optimizer()?;

    let num_clients = r.u64()? as usize;
    let num_edges = r.u64()? as usize;
    let mut edges = Vec::with_capacity(num_edges);
    for _ in 0..num_edges {
        edges.push((r.u64()? as usize, r.u64()? as usize));
    }
    let x0 = r.tensor()?;
    let pending = r.tensor()?;
    let graph = CollaborationGraph::new(num_clients, edges, x0)?;

    let client_count = r.u64()? as usize;
    let mut clients = Vec::with_capacity(client_count);
    for _ in 0..client_count {
        let id = r.u64()? as usize;
        let params = ClientParams {
            w1: r.tensor()?,
            b1: r.tensor()?,
            w2: r.tensor()?,
            b2: r.tensor()?,
        };
        let head_opt = r.optimizer()?;
        let backbone_opt = r.optimizer()?;
        clients.push(ClientCore {
            id,
            params,
            head_opt,
            backbone_opt,
        });
    }

    let server = ServerState {
        pipeline,
        sheaf,
        hn,
        collab_gcn,
        graph,
        pending,
        round,
        theta_opt,
        phi_opt,
        feature_dim,
        num_classes,
    };
    Ok((server, clients))
}

/// Rebinds loaded client cores to their (deterministically rebuilt) shards.
pub fn attach_clients(cores: Vec<ClientCore>, shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<Vec<ClientState>> {
    if cores.len() != shards.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} clients but {} shards were rebuilt",
            cores.len(),
            shards.len()
        )));
    }
    let mut out = Vec::with_capacity(cores.len());
    for (core, shard) in cores.into_iter().zip(shards) {
        if core.id != shard.client_id {
            return Err(Error::Checkpoint(format!(
                "client id mismatch: checkpoint {} vs shard {}",
                core.id, shard.client_id
            )));
        }
        let mut state = ClientState::new(shard, core.params, cfg.client_opt, cfg.client_lr)?;
        state.set_optimizers(core.head_opt, core.backbone_opt);
        out.push(state);
    }
    Ok(out)
}

/// Convenience: load a checkpoint and attach shards in one step.
pub fn load_world(path: &Path, shards: Vec<GraphShard>, cfg: &FedConfig) -> Result<World> {
    let (server, cores) = load(path)?;
    let clients = attach_clients(cores, shards, cfg)?;
    Ok(World {
        clients,
        server: Some(server),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{partition, sbm_generate, split_masks, PartitionSpec};
    use crate::orchestrator::run_fedsheafhn;

    fn shards(seed: u64) -> Vec<GraphShard> {
        let g = sbm_generate(&[15, 15], 0.3, 0.05, 6, seed).unwrap();
        partition(&g, &PartitionSpec::non_overlapping(3, seed))
            .unwrap()
            .into_iter()
            .map(|s| split_masks(s, seed).unwrap())
            .collect()
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let mut cfg = FedConfig::new(5);
        cfg.rounds = 3;
        cfg.hidden = 8;
        cfg.sheaf_mlp_hidden = 4;
        cfg.hn_mlp_hidden = 6;
        let (_, world) = run_fedsheafhn(shards(5), &cfg).unwrap();
        let server = world.server.unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.fshn");
        save(&path, &server, &world.clients).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], MAGIC);

        let (server2, cores) = load(&path).unwrap();
        assert_eq!(server2.round, server.round);
        assert_eq!(server2.graph.edges, server.graph.edges);
        assert_eq!(server2.graph.x0.data(), server.graph.x0.data());
        assert_eq!(server2.pending.data(), server.pending.data());
        for (a, b) in server2.sheaf.params().iter().zip(server.sheaf.params()) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in server2.hn.params().iter().zip(server.hn.params()) {
            assert_eq!(a.data(), b.data());
        }
        let s1 = server.theta_opt.state.as_ref().unwrap();
        let s2 = server2.theta_opt.state.as_ref().unwrap();
        assert_eq!(s1.t, s2.t);
        for (a, b) in s1.m.iter().zip(&s2.m) {
            assert_eq!(a.data(), b.data());
        }
        for (core, orig) in cores.iter().zip(&world.clients) {
            assert_eq!(core.id, orig.id);
            assert_eq!(core.params.pack_all(), orig.params.pack_all());
        }
    }

    #[test]
    fn gcn_collab_weights_survive_the_roundtrip() {
        let mut cfg = FedConfig::new(8);
        cfg.rounds = 2;
        cfg.hidden = 8;
        cfg.sheaf_mlp_hidden = 4;
        cfg.hn_mlp_hidden = 6;
        let (_, world) = crate::orchestrator::run_ablation(
            shards(8),
            &cfg,
            crate::orchestrator::AblationVariant::GcnCollab,
        )
        .unwrap();
        let server = world.server.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gcn.fshn");
        save(&path, &server, &world.clients).unwrap();
        let (server2, _) = load(&path).unwrap();
        assert_eq!(server2.pipeline, Pipeline::GcnCollab);
        let a = server.collab_gcn.as_ref().unwrap();
        let b = server2.collab_gcn.as_ref().unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fshn");
        std::fs::write(&path, b"NOPE!xxxxxxxx").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
