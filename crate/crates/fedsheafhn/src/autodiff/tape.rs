//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! A `Tape` records every operation of one forward pass in topological
//! order; `backward` walks the tape once in reverse and accumulates
//! gradients for every node. Leaves are registered with [`Tape::leaf`]
//! (trainable) or [`Tape::constant`] (no gradient kept). Each training step
//! builds a fresh tape, so tapes never outlive a single forward/backward.
//!
//! Beyond the generic ops (matmul, elementwise, softmax, ...) the tape has
//! three composite ops with hand-derived adjoints that keep the sheaf
//! pipeline differentiable end to end: per-node-block left multiplication
//! (the never-materialized `I (x) W` product), assembly of the sheaf
//! Laplacian from restriction maps, and the block-diagonal inverse square
//! root used for normalization.

use crate::autodiff::linalg::{inv_sqrt_floor, inv_sqrt_floor_backward, SpectralCtx};
use crate::autodiff::tensor::{elu, elu_grad, matmul_into, row_softmax_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { constant: bool },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Elu(Var),
    Tanh(Var),
    RowSoftmax(Var),
    Sum(Var),
    Inner(Var, Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Reshape(Var),
    BlockLmul {
        w: Var,
        x: Var,
        d: usize,
    },
    SheafLaplacian {
        maps: Var,
        edges: Vec<(usize, usize)>,
        d: usize,
    },
    BlockDiagInvSqrt {
        l: Var,
        d: usize,
        eps: f64,
        ctxs: Vec<SpectralCtx>,
    },
    MaskedCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes the loss does not
    /// depend on get a zero tensor of the right shape.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Register a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf { constant: false })
    }

    /// Register a constant input; its gradient is not accumulated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf { constant: true })
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).is_matrix() {
            return Err(shape_err("transpose", "matrix", format!("{:?}", self.value(a).shape())));
        }
        let out = self.value(a).transposed();
        self.push("transpose", out, Op::Transpose(a))
    }

    fn binary_same_shape(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?}", ta.shape()), format!("{:?}", tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| k * x);
        self.push("scale", out, Op::Scale(a, k))
    }

    /// Broadcast-add a row vector to every row of a matrix (bias add).
    pub fn add_row(&mut self, mat: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(mat), self.value(row));
        if !m.is_matrix() || r.numel() != m.cols() {
            return Err(shape_err("add_row", format!("row of {} entries", m.cols()), format!("{:?}", r.shape())));
        }
        let cols = m.cols();
        let rdata = r.data();
        let data = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rdata[i % cols])
            .collect();
        let out = Tensor::new(m.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(mat, row))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(elu);
        self.push("elu", out, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(shape_err("row_softmax", "matrix", format!("{:?}", t.shape())));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; rows * cols];
        row_softmax_into(t.data(), &mut out, rows, cols);
        let out = Tensor::new(vec![rows, cols], out)?;
        self.push("row_softmax", out, Op::RowSoftmax(a))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Frobenius inner product of two same-shape tensors, as a scalar node.
    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("inner", format!("{:?}", ta.shape()), format!("{:?}", tb.shape())));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push("inner", Tensor::scalar(s), Op::Inner(a, b))
    }

    /// Arithmetic mean over the rows of a matrix; output shape `[cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() || t.rows() == 0 {
            return Err(shape_err("mean_rows", "non-empty matrix", format!("{:?}", t.shape())));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for (o, &x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let out = Tensor::new(vec![cols], out)?;
        self.push("mean_rows", out, Op::MeanRows(a))
    }

    /// Select rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(shape_err("gather_rows", "matrix", format!("{:?}", t.shape())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::invalid(format!("gather_rows: row {bad} out of range {}", t.rows())));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), cols], data)?;
        self.push("gather_rows", out, Op::GatherRows(a, indices))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", format!("{} rows", ta.rows()), format!("{:?}", tb.shape())));
        }
        let rows = ta.rows();
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::new(vec![rows, ca + cb], data)?;
        self.push("concat_cols", out, Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(shape_err("reshape", format!("{} elements", t.numel()), format!("{shape:?}")));
        }
        let out = Tensor::new(shape, t.data().to_vec())?;
        self.push("reshape", out, Op::Reshape(a))
    }

    /// Per-node-block left multiplication: with `x` of shape `[n*d x f]`
    /// seen as `n` stacked `d x f` blocks, returns `w * block` for each
    /// block. This applies the Kronecker product `I (x) w` without ever
    /// materializing it.
    pub fn block_lmul(&mut self, w: Var, x: Var, d: usize) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if !tw.is_matrix() || tw.rows() != d || tw.cols() != d {
            return Err(shape_err("block_lmul", format!("[{d} x {d}] weight"), format!("{:?}", tw.shape())));
        }
        if !tx.is_matrix() || tx.rows() % d != 0 {
            return Err(shape_err("block_lmul", format!("rows divisible by {d}"), format!("{:?}", tx.shape())));
        }
        let n = tx.rows() / d;
        let f = tx.cols();
        let mut out = vec![0.0; tx.numel()];
        for blk in 0..n {
            let xi = &tx.data()[blk * d * f..(blk + 1) * d * f];
            let oi = &mut out[blk * d * f..(blk + 1) * d * f];
            matmul_into(tw.data(), xi, oi, d, d, f);
        }
        let out = Tensor::new(vec![n * d, f], out)?;
        self.push("block_lmul", out, Op::BlockLmul { w, x, d })
    }

    /// Assemble the sheaf Laplacian from per-pair restriction maps.
    ///
    /// `maps` has one row per incident (node, edge) pair, `d*d` values in
    /// row-major order; for edge index `e = (n, m)`, row `2e` holds the map
    /// on the `n` side and row `2e + 1` the map on the `m` side. The output
    /// is the dense `[nodes*d x nodes*d]` operator with diagonal blocks
    /// `sum_e F_ne^T F_ne` and off-diagonal blocks `-F_ne^T F_me`.
    pub fn sheaf_laplacian(
        &mut self,
        maps: Var,
        edges: &[(usize, usize)],
        nodes: usize,
        d: usize,
    ) -> Result<Var> {
        let tm = self.value(maps);
        if !tm.is_matrix() || tm.rows() != 2 * edges.len() || tm.cols() != d * d {
            return Err(shape_err(
                "sheaf_laplacian",
                format!("[{} x {}] restriction maps", 2 * edges.len(), d * d),
                format!("{:?}", tm.shape()),
            ));
        }
        if let Some(&(n, m)) = edges.iter().find(|&&(n, m)| n >= nodes || m >= nodes || n == m) {
            return Err(Error::invalid(format!("sheaf_laplacian: bad edge ({n}, {m})")));
        }
        let nd = nodes * d;
        let mut l = vec![0.0; nd * nd];
        let mut tmp = vec![0.0; d * d];
        for (e, &(n, m)) in edges.iter().enumerate() {
            let fa = tm.row(2 * e);
            let fb = tm.row(2 * e + 1);
            // Diagonal contributions F^T F.
            for (side, f) in [(n, fa), (m, fb)] {
                gram_into(f, &mut tmp, d);
                add_block(&mut l, nd, side, side, &tmp, d, 1.0);
            }
            // Off-diagonal contributions -F_n^T F_m and its transpose.
            ata_into(fa, fb, &mut tmp, d);
            add_block(&mut l, nd, n, m, &tmp, d, -1.0);
            let tmp_t = transpose_block(&tmp, d);
            add_block(&mut l, nd, m, n, &tmp_t, d, -1.0);
        }
        let out = Tensor::new(vec![nd, nd], l)?;
        self.push(
            "sheaf_laplacian",
            out,
            Op::SheafLaplacian {
                maps,
                edges: edges.to_vec(),
                d,
            },
        )
    }

    /// Block-diagonal inverse square root of the diagonal `d x d` blocks of
    /// `l`, with an eigenvalue floor of `eps`. Off-diagonal blocks of the
    /// output are zero.
    pub fn block_diag_inv_sqrt(&mut self, l: Var, d: usize, eps: f64) -> Result<Var> {
        let tl = self.value(l);
        if !tl.is_matrix() || tl.rows() != tl.cols() || !tl.rows().is_multiple_of(d) {
            return Err(shape_err("block_diag_inv_sqrt", format!("square, divisible by {d}"), format!("{:?}", tl.shape())));
        }
        let n = tl.rows() / d;
        let nd = tl.rows();
        let mut out = vec![0.0; nd * nd];
        let mut ctxs = Vec::with_capacity(n);
        let mut block = vec![0.0; d * d];
        for b in 0..n {
            copy_block(tl.data(), nd, b, b, &mut block, d);
            let (inv, ctx) = inv_sqrt_floor(&block, d, eps);
            write_block(&mut out, nd, b, b, &inv, d);
            ctxs.push(ctx);
        }
        let out = Tensor::new(vec![nd, nd], out)?;
        self.push("block_diag_inv_sqrt", out, Op::BlockDiagInvSqrt { l, d, eps, ctxs })
    }

    /// Mean cross-entropy of `logits` rows listed in `mask` against integer
    /// `labels`, as a scalar node.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if !t.is_matrix() || t.rows() != labels.len() {
            return Err(shape_err("masked_cross_entropy", format!("{} logit rows", labels.len()), format!("{:?}", t.shape())));
        }
        if mask.is_empty() {
            return Err(Error::invalid("masked_cross_entropy: empty mask"));
        }
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(&bad) = mask.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("masked_cross_entropy: mask row {bad} out of range")));
        }
        if let Some(&bad) = mask.iter().find(|&&i| labels[i] >= cols) {
            return Err(Error::invalid(format!("masked_cross_entropy: label {} exceeds {cols} classes", labels[bad])));
        }
        let mut probs = vec![0.0; rows * cols];
        row_softmax_into(t.data(), &mut probs, rows, cols);
        let mut loss = 0.0;
        for &i in mask {
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= mask.len() as f64;
        let probs = Tensor::new(vec![rows, cols], probs)?;
        self.push(
            "masked_cross_entropy",
            Tensor::scalar(loss),
            Op::MaskedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from a scalar root. Every node reachable from the root
    /// receives its gradient; leaves off the path read back as zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) -> Result<()> {
        let add_to = |v: Var, delta: Tensor, grads: &mut Vec<Option<Tensor>>| {
            if matches!(self.nodes[v.0].op, Op::Leaf { constant: true }) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = g.matmul(&tb.transposed())?;
                let gb = ta.transposed().matmul(g)?;
                add_to(*a, ga, grads);
                add_to(*b, gb, grads);
            }
            Op::Transpose(a) => add_to(*a, g.transposed(), grads),
            Op::Add(a, b) => {
                add_to(*a, g.clone(), grads);
                add_to(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                add_to(*a, g.clone(), grads);
                add_to(*b, g.map(|x| -x), grads);
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = Tensor::new(g.shape().to_vec(), g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect())?;
                let gb = Tensor::new(g.shape().to_vec(), g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect())?;
                add_to(*a, ga, grads);
                add_to(*b, gb, grads);
            }
            Op::Scale(a, k) => add_to(*a, g.map(|x| k * x), grads),
            Op::AddRow(mat, row) => {
                add_to(*mat, g.clone(), grads);
                let cols = self.value(*row).numel();
                let mut rsum = vec![0.0; cols];
                for (i, &x) in g.data().iter().enumerate() {
                    rsum[i % cols] += x;
                }
                add_to(*row, Tensor::new(self.value(*row).shape().to_vec(), rsum)?, grads);
            }
            Op::Relu(a) => {
                let input = self.value(*a);
                let data = g.data().iter().zip(input.data()).map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 }).collect();
                add_to(*a, Tensor::new(g.shape().to_vec(), data)?, grads);
            }
            Op::Elu(a) => {
                let input = self.value(*a);
                let data = g.data().iter().zip(input.data()).map(|(&gi, &x)| gi * elu_grad(x)).collect();
                add_to(*a, Tensor::new(g.shape().to_vec(), data)?, grads);
            }
            Op::Tanh(a) => {
                let out = &self.nodes[id].value;
                let data = g.data().iter().zip(out.data()).map(|(&gi, &y)| gi * (1.0 - y * y)).collect();
                add_to(*a, Tensor::new(g.shape().to_vec(), data)?, grads);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[id].value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yrow = y.row(i);
                    let grow = &g.data()[i * cols..(i + 1) * cols];
                    let dot: f64 = yrow.iter().zip(grow).map(|(p, gi)| p * gi).sum();
                    for j in 0..cols {
                        out[i * cols + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                add_to(*a, Tensor::new(vec![rows, cols], out)?, grads);
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                add_to(*a, Tensor::filled(self.value(*a).shape(), s), grads);
            }
            Op::Inner(a, b) => {
                let s = g.data()[0];
                let (ta, tb) = (self.value(*a), self.value(*b));
                add_to(*a, tb.map(|x| s * x), grads);
                add_to(*b, ta.map(|x| s * x), grads);
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                let inv = 1.0 / rows as f64;
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        out[i * cols + j] = g.data()[j] * inv;
                    }
                }
                add_to(*a, Tensor::new(vec![rows, cols], out)?, grads);
            }
            Op::GatherRows(a, indices) => {
                let t = self.value(*a);
                let cols = t.cols();
                let mut out = vec![0.0; t.numel()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        out[i * cols + j] += g.data()[k * cols + j];
                    }
                }
                add_to(*a, Tensor::new(t.shape().to_vec(), out)?, grads);
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                let mut ga = vec![0.0; rows * ca];
                let mut gb = vec![0.0; rows * cb];
                for i in 0..rows {
                    let grow = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                    ga[i * ca..(i + 1) * ca].copy_from_slice(&grow[..ca]);
                    gb[i * cb..(i + 1) * cb].copy_from_slice(&grow[ca..]);
                }
                add_to(*a, Tensor::new(vec![rows, ca], ga)?, grads);
                add_to(*b, Tensor::new(vec![rows, cb], gb)?, grads);
            }
            Op::Reshape(a) => {
                let t = self.value(*a);
                add_to(*a, Tensor::new(t.shape().to_vec(), g.data().to_vec())?, grads);
            }
            Op::BlockLmul { w, x, d } => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let d = *d;
                let n = tx.rows() / d;
                let f = tx.cols();
                let mut gw = vec![0.0; d * d];
                let mut gx = vec![0.0; tx.numel()];
                let mut tmp = vec![0.0; d * d];
                let wt = tw.transposed();
                for blk in 0..n {
                    let gi = &g.data()[blk * d * f..(blk + 1) * d * f];
                    let xi = &tx.data()[blk * d * f..(blk + 1) * d * f];
                    // gw += G_i X_i^T
                    for r in 0..d {
                        for c in 0..d {
                            let mut acc = 0.0;
                            for j in 0..f {
                                acc += gi[r * f + j] * xi[c * f + j];
                            }
                            tmp[r * d + c] = acc;
                        }
                    }
                    for (a, b) in gw.iter_mut().zip(&tmp) {
                        *a += b;
                    }
                    // gx_i = W^T G_i
                    matmul_into(wt.data(), gi, &mut gx[blk * d * f..(blk + 1) * d * f], d, d, f);
                }
                add_to(*w, Tensor::new(vec![d, d], gw)?, grads);
                add_to(*x, Tensor::new(tx.shape().to_vec(), gx)?, grads);
            }
            Op::SheafLaplacian { maps, edges, d } => {
                let tm = self.value(*maps);
                let d = *d;
                let nd = self.nodes[id].value.rows();
                let mut gm = vec![0.0; tm.numel()];
                let mut gnn = vec![0.0; d * d];
                let mut gmm = vec![0.0; d * d];
                let mut gnm = vec![0.0; d * d];
                let mut gmn = vec![0.0; d * d];
                for (e, &(n, m)) in edges.iter().enumerate() {
                    let fa = tm.row(2 * e);
                    let fb = tm.row(2 * e + 1);
                    copy_block(g.data(), nd, n, n, &mut gnn, d);
                    copy_block(g.data(), nd, m, m, &mut gmm, d);
                    copy_block(g.data(), nd, n, m, &mut gnm, d);
                    copy_block(g.data(), nd, m, n, &mut gmn, d);
                    let da = &mut gm[(2 * e) * d * d..(2 * e + 1) * d * d];
                    // dA = A (Gnn + Gnn^T) - B Gnm^T - B Gmn
                    accumulate_sym_product(fa, &gnn, da, d);
                    accumulate_neg_bt(fb, &gnm, da, d, true);
                    accumulate_neg_bt(fb, &gmn, da, d, false);
                    let db = &mut gm[(2 * e + 1) * d * d..(2 * e + 2) * d * d];
                    // dB = B (Gmm + Gmm^T) - A Gnm - A Gmn^T
                    accumulate_sym_product(fb, &gmm, db, d);
                    accumulate_neg_bt(fa, &gnm, db, d, false);
                    accumulate_neg_bt(fa, &gmn, db, d, true);
                }
                add_to(*maps, Tensor::new(tm.shape().to_vec(), gm)?, grads);
            }
            Op::BlockDiagInvSqrt { l, d, eps, ctxs } => {
                let tl = self.value(*l);
                let d = *d;
                let nd = tl.rows();
                let n = nd / d;
                let mut gl = vec![0.0; tl.numel()];
                let mut gblock = vec![0.0; d * d];
                for (b, ctx) in ctxs.iter().enumerate().take(n) {
                    copy_block(g.data(), nd, b, b, &mut gblock, d);
                    let gin = inv_sqrt_floor_backward(&gblock, ctx, d, *eps);
                    write_block(&mut gl, nd, b, b, &gin, d);
                }
                add_to(*l, Tensor::new(tl.shape().to_vec(), gl)?, grads);
            }
            Op::MaskedCrossEntropy { logits, labels, mask, probs } => {
                let s = g.data()[0] / mask.len() as f64;
                let t = self.value(*logits);
                let (rows, cols) = (t.rows(), t.cols());
                let mut out = vec![0.0; rows * cols];
                for &i in mask {
                    for j in 0..cols {
                        let p = probs.at(i, j);
                        let y = if labels[i] == j { 1.0 } else { 0.0 };
                        out[i * cols + j] += s * (p - y);
                    }
                }
                add_to(*logits, Tensor::new(vec![rows, cols], out)?, grads);
            }
        }
        Ok(())
    }
}

// Small fixed-size block helpers (all row-major).

fn copy_block(src: &[f64], stride: usize, br: usize, bc: usize, out: &mut [f64], d: usize) {
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = src[(br * d + r) * stride + bc * d + c];
        }
    }
}

fn write_block(dst: &mut [f64], stride: usize, br: usize, bc: usize, block: &[f64], d: usize) {
    for r in 0..d {
        for c in 0..d {
            dst[(br * d + r) * stride + bc * d + c] = block[r * d + c];
        }
    }
}

fn add_block(dst: &mut [f64], stride: usize, br: usize, bc: usize, block: &[f64], d: usize, scale: f64) {
    for r in 0..d {
        for c in 0..d {
            dst[(br * d + r) * stride + bc * d + c] += scale * block[r * d + c];
        }
    }
}

/// out = f^T f
fn gram_into(f: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += f[k * d + i] * f[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// out = a^T b
fn ata_into(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += a[k * d + i] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

fn transpose_block(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

/// dst += f * (g + g^T)
fn accumulate_sym_product(f: &[f64], g: &[f64], dst: &mut [f64], d: usize) {
    for p in 0..d {
        for q in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += f[p * d + j] * (g[q * d + j] + g[j * d + q]);
            }
            dst[p * d + q] += acc;
        }
    }
}

/// dst -= other * g^T (transposed = true) or other * g (transposed = false)
fn accumulate_neg_bt(other: &[f64], g: &[f64], dst: &mut [f64], d: usize, transposed: bool) {
    for p in 0..d {
        for q in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                let gv = if transposed { g[q * d + j] } else { g[j * d + q] };
                acc += other[p * d + j] * gv;
            }
            dst[p * d + q] -= acc;
        }
    }
}
