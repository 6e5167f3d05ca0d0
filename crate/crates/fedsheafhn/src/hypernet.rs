//! Attention hypernetwork: maps enriched client embeddings to every
//! client's backbone parameters in one batch.
//!
//! The attention layer is `softmax((X Aq)(X Ak)^T) X Av` with no score
//! scaling, followed by a two-layer MLP whose output row `i` unpacks to
//! client `i`'s backbone. Server training minimizes the Frobenius inner
//! product between the generated batch and the (constant) client deltas;
//! differentiating that surrogate routes the deltas through the generator's
//! Jacobians back to every server parameter.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::glorot;
use rand::Rng;

/// Dropout rate applied to the attention output during training passes.
pub const DEFAULT_DROPOUT: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct HyperNet {
    pub aq: Tensor,
    pub ak: Tensor,
    pub av: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub dropout: f64,
}

impl HyperNet {
    /// `hidden`-dimensional descriptors in, `out_dim` packed backbone
    /// values out, through an `mlp_hidden`-wide bottleneck. The output
    /// layer starts small so initial backbones sit near zero.
    pub fn init(
        hidden: usize,
        mlp_hidden: usize,
        out_dim: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(HyperNet {
            aq: glorot(hidden, hidden, rng),
            ak: glorot(hidden, hidden, rng),
            av: glorot(hidden, hidden, rng),
            mlp_w1: glorot(hidden, mlp_hidden, rng),
            mlp_b1: Tensor::zeros(&[mlp_hidden]),
            mlp_w2: {
                let mut w = glorot(mlp_hidden, out_dim, rng);
                for v in w.data_mut() {
                    *v *= 0.1;
                }
                w
            },
            mlp_b2: Tensor::zeros(&[out_dim]),
            dropout,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.mlp_w2.cols()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.aq,
            &self.ak,
            &self.av,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.aq,
            &mut self.ak,
            &mut self.av,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }
}

/// Tape handles for the hypernetwork parameters.
#[derive(Debug, Clone, Copy)]
pub struct HyperNetVars {
    pub aq: Var,
    pub ak: Var,
    pub av: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

impl HyperNetVars {
    pub fn leaves(tape: &mut Tape, hn: &HyperNet) -> HyperNetVars {
        HyperNetVars {
            aq: tape.leaf(hn.aq.clone()),
            ak: tape.leaf(hn.ak.clone()),
            av: tape.leaf(hn.av.clone()),
            mlp_w1: tape.leaf(hn.mlp_w1.clone()),
            mlp_b1: tape.leaf(hn.mlp_b1.clone()),
            mlp_w2: tape.leaf(hn.mlp_w2.clone()),
            mlp_b2: tape.leaf(hn.mlp_b2.clone()),
        }
    }

    pub fn all(&self) -> [Var; 7] {
        [self.aq, self.ak, self.av, self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2]
    }
}

/// `softmax((X Aq)(X Ak)^T) X Av`, exactly as written: no score scaling.
pub fn attention_on_tape(tape: &mut Tape, x: Var, vars: &HyperNetVars) -> Result<Var> {
    let q = tape.matmul(x, vars.aq)?;
    let k = tape.matmul(x, vars.ak)?;
    let v = tape.matmul(x, vars.av)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let weights = tape.row_softmax(scores)?;
    tape.matmul(weights, v)
}

/// Full generator on the tape: attention, optional dropout mask (an
/// elementwise multiplier, already inverse-scaled), then the MLP.
pub fn generate_on_tape(
    tape: &mut Tape,
    x: Var,
    vars: &HyperNetVars,
    dropout_mask: Option<Var>,
    use_attention: bool,
) -> Result<Var> {
    let mut att = if use_attention {
        attention_on_tape(tape, x, vars)?
    } else {
        x
    };
    if let Some(mask) = dropout_mask {
        att = tape.hadamard(att, mask)?;
    }
    let hid = tape.matmul(att, vars.mlp_w1)?;
    let hid = tape.add_row(hid, vars.mlp_b1)?;
    let hid = tape.relu(hid)?;
    let out = tape.matmul(hid, vars.mlp_w2)?;
    tape.add_row(out, vars.mlp_b2)
}

/// Inverted-dropout multiplier: entries are 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let keep = 1.0 - rate;
    let data = (0..numel)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data lengths agree by construction")
}

/// Evaluation-mode attention (no dropout) with parameters as constants.
pub fn attention(x: &Tensor, hn: &HyperNet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = HyperNetVars::leaves(&mut tape, hn);
    let out = attention_on_tape(&mut tape, xv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Evaluation-mode generation: `[N x h]` descriptors to `[N x P]` packed
/// backbones, dropout disabled.
pub fn generate(x: &Tensor, hn: &HyperNet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = HyperNetVars::leaves(&mut tape, hn);
    let out = generate_on_tape(&mut tape, xv, &vars, None, true)?;
    Ok(tape.value(out).clone())
}

/// The server's surrogate objective `<omega, delta>` with `delta` constant.
pub fn server_surrogate_loss(omega: &Tensor, delta: &Tensor) -> Result<f64> {
    if omega.shape() != delta.shape() {
        return Err(Error::ShapeMismatch {
            op: "server_surrogate_loss",
            expected: format!("{:?}", omega.shape()),
            got: format!("{:?}", delta.shape()),
        });
    }
    Ok(omega
        .data()
        .iter()
        .zip(delta.data())
        .map(|(a, b)| a * b)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_diff, max_rel_err};
    use crate::autodiff::tensor::row_softmax_into;
    use crate::rng::{randn, stream};

    fn fixture(n: usize, h: usize, out: usize, seed: u64) -> (Tensor, HyperNet) {
        let mut rng = stream(seed, &[80]);
        let x = randn(&[n, h], 1.0, &mut rng);
        let hn = HyperNet::init(h, 6, out, 0.0, &mut rng).unwrap();
        (x, hn)
    }

    #[test]
    fn single_row_attention_is_value_projection() {
        let (x, hn) = fixture(1, 3, 4, 1);
        let out = attention(&x, &hn).unwrap();
        let expect = x.matmul(&hn.av).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let (x, mut hn) = fixture(4, 3, 4, 2);
        hn.aq = Tensor::zeros(&[3, 3]);
        hn.ak = Tensor::zeros(&[3, 3]);
        let out = attention(&x, &hn).unwrap();
        // Uniform weights: every output row is mean(X) * Av.
        let mean = crate::client::mean_pool(&x).unwrap();
        let mean = Tensor::new(vec![1, 3], mean.data().to_vec()).unwrap();
        let expect = mean.matmul(&hn.av).unwrap();
        for i in 0..4 {
            for (a, b) in out.row(i).iter().zip(expect.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_direct_formula_evaluation() {
        let (x, hn) = fixture(2, 3, 4, 3);
        let out = attention(&x, &hn).unwrap();
        // Direct dense evaluation of the same expression.
        let q = x.matmul(&hn.aq).unwrap();
        let k = x.matmul(&hn.ak).unwrap();
        let scores = q.matmul(&k.transposed()).unwrap();
        let mut w = vec![0.0; 4];
        row_softmax_into(scores.data(), &mut w, 2, 2);
        let w = Tensor::new(vec![2, 2], w).unwrap();
        let expect = w.matmul(&x.matmul(&hn.av).unwrap()).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_output_layer_generates_zero_backbones() {
        let (x, mut hn) = fixture(3, 4, 5, 4);
        hn.mlp_w2 = Tensor::zeros(&[6, 5]);
        hn.mlp_b2 = Tensor::zeros(&[5]);
        let out = generate(&x, &hn).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_rows_permutes_generated_backbones() {
        let (x, hn) = fixture(4, 3, 5, 5);
        let out = generate(&x, &hn).unwrap();
        let perm = [2usize, 0, 3, 1];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| x.row(p).to_vec()).collect();
        let xp = Tensor::from_rows(&rows).unwrap();
        let outp = generate(&xp, &hn).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in outp.row(i).iter().zip(out.row(p)) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let (x, hn) = fixture(3, 4, 5, 6);
        let mut rng = stream(7, &[81]);
        let target = randn(&[3, 5], 1.0, &mut rng);
        let flat0: Vec<f64> = hn.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let eval = |flat: &[f64]| -> f64 {
            let mut h = hn.clone();
            let mut off = 0;
            for p in h.params_mut() {
                let n = p.numel();
                p.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            let out = generate(&x, &h).unwrap();
            server_surrogate_loss(&out, &target).unwrap()
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = HyperNetVars::leaves(&mut tape, &hn);
        let out = generate_on_tape(&mut tape, xv, &vars, None, true).unwrap();
        let c = tape.constant(target.clone());
        let loss = tape.inner(out, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut analytic = Vec::new();
        for v in vars.all() {
            analytic.extend_from_slice(grads.wrt(v).data());
        }
        let numeric = central_diff(eval, &flat0, 1e-5);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn surrogate_with_zero_delta_is_zero_everywhere() {
        let (x, hn) = fixture(3, 4, 5, 8);
        let out = generate(&x, &hn).unwrap();
        let zero = Tensor::zeros(&[3, 5]);
        assert_eq!(server_surrogate_loss(&out, &zero).unwrap(), 0.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = HyperNetVars::leaves(&mut tape, &hn);
        let o = generate_on_tape(&mut tape, xv, &vars, None, true).unwrap();
        let z = tape.constant(zero);
        let loss = tape.inner(o, z).unwrap();
        let grads = tape.backward(loss).unwrap();
        for v in vars.all() {
            assert!(grads.wrt(v).data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn surrogate_gradient_for_left_operand_is_exactly_the_constant() {
        let mut rng = stream(9, &[82]);
        let omega = randn(&[2, 3], 1.0, &mut rng);
        let c = randn(&[2, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let ov = tape.leaf(omega);
        let cv = tape.constant(c.clone());
        let loss = tape.inner(ov, cv).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(ov).data(), c.data());
    }

    #[test]
    fn generated_rows_unpack_into_backbones_and_back() {
        use crate::client::ClientParams;
        let (feature_dim, hidden) = (3, 4);
        let p = ClientParams::backbone_len(feature_dim, hidden);
        let mut rng = stream(10, &[84]);
        let x = randn(&[3, 6], 1.0, &mut rng);
        let hn = HyperNet::init(6, 5, p, 0.0, &mut rng).unwrap();
        let omega = generate(&x, &hn).unwrap();
        assert_eq!(omega.shape(), &[3, p]);
        let mut params = ClientParams::init(feature_dim, hidden, 2, &mut rng);
        for i in 0..3 {
            params.set_backbone(omega.row(i)).unwrap();
            assert_eq!(params.pack_backbone(), omega.row(i));
        }
    }

    #[test]
    fn dropout_mask_is_seeded_and_inverse_scaled() {
        let mut a = stream(3, &[83]);
        let mut b = stream(3, &[83]);
        let ma = dropout_mask(&[4, 4], 0.25, &mut a);
        let mb = dropout_mask(&[4, 4], 0.25, &mut b);
        assert_eq!(ma.data(), mb.data());
        assert!(ma.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
    }
}
