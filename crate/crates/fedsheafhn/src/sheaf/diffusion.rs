//! Learnable sheaf diffusion over the collaboration graph.
//!
//! Embeddings `[N x h]` are reshaped to `[N*d x h/d]` stalk blocks. Each
//! layer recomputes its restriction maps from the current features with a
//! one-hidden-layer MLP on concatenated endpoint blocks, assembles the
//! normalized sheaf Laplacian, and applies the residual update
//! `X <- X - elu(Delta (I (x) W1) X W2)`.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::glorot;
use crate::sheaf::laplacian::DEGREE_EIGENVALUE_FLOOR;
use crate::sheaf::CollaborationGraph;

/// One diffusion layer: restriction-map MLP plus the two mixing weights.
#[derive(Debug, Clone)]
pub struct SheafLayer {
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    /// Stalk mixer, `[d x d]`; applied per node block as `I (x) w1`.
    pub w1: Tensor,
    /// Channel mixer, `[h/d x h/d]`.
    pub w2: Tensor,
}

/// A stack of diffusion layers with a fixed stalk dimension.
#[derive(Debug, Clone)]
pub struct SheafStack {
    pub stalk_dim: usize,
    pub channels: usize,
    pub layers: Vec<SheafLayer>,
    pub eps: f64,
}

impl SheafStack {
    /// Initializes `num_layers` layers for `hidden`-dimensional embeddings
    /// split into stalks of dimension `d`; `hidden` must divide evenly.
    pub fn init(
        hidden: usize,
        d: usize,
        num_layers: usize,
        mlp_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if d == 0 || !hidden.is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "sheaf stack: hidden {hidden} not divisible by stalk dimension {d}"
            )));
        }
        let channels = hidden / d;
        let pair_in = 2 * d * channels;
        let layers = (0..num_layers)
            .map(|_| SheafLayer {
                mlp_w1: glorot(pair_in, mlp_hidden, rng),
                mlp_b1: Tensor::zeros(&[mlp_hidden]),
                mlp_w2: glorot(mlp_hidden, d * d, rng),
                mlp_b2: Tensor::zeros(&[d * d]),
                w1: glorot(d, d, rng),
                w2: glorot(channels, channels, rng),
            })
            .collect();
        Ok(SheafStack {
            stalk_dim: d,
            channels,
            layers,
            eps: DEGREE_EIGENVALUE_FLOOR,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.stalk_dim * self.channels
    }

    /// All trainable tensors in a fixed order (optimizer slot order).
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2, &l.w1, &l.w2])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.mlp_w1, &mut l.mlp_b1, &mut l.mlp_w2, &mut l.mlp_b2, &mut l.w1, &mut l.w2])
            .collect()
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub w1: Var,
    pub w2: Var,
}

impl LayerVars {
    pub fn leaves(tape: &mut Tape, layer: &SheafLayer) -> LayerVars {
        LayerVars {
            mlp_w1: tape.leaf(layer.mlp_w1.clone()),
            mlp_b1: tape.leaf(layer.mlp_b1.clone()),
            mlp_w2: tape.leaf(layer.mlp_w2.clone()),
            mlp_b2: tape.leaf(layer.mlp_b2.clone()),
            w1: tape.leaf(layer.w1.clone()),
            w2: tape.leaf(layer.w2.clone()),
        }
    }

    pub fn all(&self) -> [Var; 6] {
        [self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2, self.w1, self.w2]
    }
}

/// Builds the full diffusion on a tape: reshape to stalk blocks, apply every
/// layer, reshape back to `[N x h]`. With zero layers this is the reshape
/// round-trip, i.e. the identity.
#[allow(clippy::too_many_arguments)]
pub fn diffuse_on_tape(
    tape: &mut Tape,
    x0: Var,
    edges: &[(usize, usize)],
    layers: &[LayerVars],
    num_clients: usize,
    d: usize,
    channels: usize,
    eps: f64,
) -> Result<Var> {
    let hidden = d * channels;
    if tape.value(x0).shape() != [num_clients, hidden] {
        return Err(Error::ShapeMismatch {
            op: "diffuse",
            expected: format!("[{num_clients} x {hidden}]"),
            got: format!("{:?}", tape.value(x0).shape()),
        });
    }
    let mut x = tape.reshape(x0, vec![num_clients * d, channels])?;
    for vars in layers {
        x = sheaf_layer_on_tape(tape, x, edges, *vars, num_clients, d, channels, eps)?;
    }
    tape.reshape(x, vec![num_clients, hidden])
}

/// One residual diffusion layer on the tape.
#[allow(clippy::too_many_arguments)]
pub fn sheaf_layer_on_tape(
    tape: &mut Tape,
    x: Var,
    edges: &[(usize, usize)],
    vars: LayerVars,
    num_clients: usize,
    d: usize,
    channels: usize,
    eps: f64,
) -> Result<Var> {
    // Restriction maps from the current features: one row per incident
    // (node, edge) pair, own block first, neighbor block second.
    let mut self_rows = Vec::with_capacity(2 * edges.len() * d);
    let mut other_rows = Vec::with_capacity(2 * edges.len() * d);
    for &(n, m) in edges {
        for r in 0..d {
            self_rows.push(n * d + r);
        }
        for r in 0..d {
            other_rows.push(m * d + r);
        }
        for r in 0..d {
            self_rows.push(m * d + r);
        }
        for r in 0..d {
            other_rows.push(n * d + r);
        }
    }
    let pairs = 2 * edges.len();
    let own = tape.gather_rows(x, self_rows)?;
    let own = tape.reshape(own, vec![pairs, d * channels])?;
    let peer = tape.gather_rows(x, other_rows)?;
    let peer = tape.reshape(peer, vec![pairs, d * channels])?;
    let pair_in = tape.concat_cols(own, peer)?;
    let hid = tape.matmul(pair_in, vars.mlp_w1)?;
    let hid = tape.add_row(hid, vars.mlp_b1)?;
    let hid = tape.elu(hid)?;
    let maps = tape.matmul(hid, vars.mlp_w2)?;
    let maps = tape.add_row(maps, vars.mlp_b2)?;

    let l = tape.sheaf_laplacian(maps, edges, num_clients, d)?;
    let dinv = tape.block_diag_inv_sqrt(l, d, eps)?;
    let dl = tape.matmul(dinv, l)?;
    let delta = tape.matmul(dl, dinv)?;

    let mixed = tape.block_lmul(vars.w1, x, d)?;
    let diffused = tape.matmul(delta, mixed)?;
    let diffused = tape.matmul(diffused, vars.w2)?;
    let act = tape.elu(diffused)?;
    tape.sub(x, act)
}

/// Convenience forward pass with the stack's own parameters as constants.
pub fn diffuse(g: &CollaborationGraph, stack: &SheafStack) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x0 = tape.constant(g.x0.clone());
    let layers: Vec<LayerVars> = stack
        .layers
        .iter()
        .map(|l| LayerVars::leaves(&mut tape, l))
        .collect();
    let out = diffuse_on_tape(
        &mut tape,
        x0,
        &g.edges,
        &layers,
        g.num_clients,
        stack.stalk_dim,
        stack.channels,
        stack.eps,
    )?;
    Ok(tape.value(out).clone())
}
