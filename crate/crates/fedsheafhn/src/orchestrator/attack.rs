//! Malicious-client embedding attacks.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Replaced row is `a * ones` with a single `a ~ N(0, tau^2)` draw.
    SameValue,
    /// Replaced row is i.i.d. `N(0, tau^2)` noise.
    Gaussian,
}

impl AttackKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same_value" => Some(AttackKind::SameValue),
            "gaussian" => Some(AttackKind::Gaussian),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::SameValue => "same_value",
            AttackKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub ratio: f64,
    pub tau: f64,
}

/// Replaces the `floor(ratio * N)` lowest-index clients' embedding rows
/// with adversarial ones. `ratio` outside [0, 1] is clamped.
pub fn inject_malicious(
    embeddings: &Tensor,
    ratio: f64,
    kind: AttackKind,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let n = embeddings.rows();
    let h = embeddings.cols();
    let count = ((ratio.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n);
    let mut out = embeddings.clone();
    for i in 0..count {
        match kind {
            AttackKind::SameValue => {
                let a = tau * standard_normal(rng);
                for j in 0..h {
                    out.set(i, j, a);
                }
            }
            AttackKind::Gaussian => {
                for j in 0..h {
                    out.set(i, j, tau * standard_normal(rng));
                }
            }
        }
    }
    out
}
