//! Small symmetric-matrix helpers: cyclic Jacobi eigendecomposition and the
//! matrix inverse square root with an eigenvalue floor, plus the
//! Daleckii-Krein rule that backpropagates through such a matrix function.

/// Eigendecomposition of a symmetric n x n matrix by cyclic Jacobi rotations.
///
/// Returns `(q, lambda)` with eigenvectors in the columns of `q` (row-major
/// n x n) so that `a = q * diag(lambda) * q^T`. Eigenvalues are unsorted.
pub fn sym_eig(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    if n == 1 {
        return (q, vec![m[0]]);
    }
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for r in (p + 1)..n {
                off += m[p * n + r] * m[p * n + r];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for r in (p + 1)..n {
                let apq = m[p * n + r];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[r * n + r];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows and columns p, r of m.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + r];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + r] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[r * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[r * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkq = q[k * n + r];
                    q[k * n + p] = c * qkp - s * qkq;
                    q[k * n + r] = s * qkp + c * qkq;
                }
            }
        }
    }
    let lambda = (0..n).map(|i| m[i * n + i]).collect();
    (q, lambda)
}

/// Smallest eigenvalue of a symmetric matrix (Jacobi based).
pub fn sym_min_eigenvalue(a: &[f64], n: usize) -> f64 {
    let (_, lambda) = sym_eig(a, n);
    lambda.into_iter().fold(f64::INFINITY, f64::min)
}

/// Saved spectral data for one block, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct SpectralCtx {
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// `f(A) = Q diag(g(lambda)) Q^T` with `g(l) = 1 / sqrt(max(l, eps))`.
///
/// The input is symmetrized first, so the forward map is well defined on
/// arbitrary square blocks. Returns the result and the spectral context.
pub fn inv_sqrt_floor(block: &[f64], n: usize, eps: f64) -> (Vec<f64>, SpectralCtx) {
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (block[i * n + j] + block[j * n + i]);
        }
    }
    let (q, lambda) = sym_eig(&sym, n);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let g = 1.0 / lambda[k].max(eps).sqrt();
                acc += q[i * n + k] * g * q[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
    (out, SpectralCtx { q, lambda })
}

/// Backward of [`inv_sqrt_floor`] via the Daleckii-Krein formula.
///
/// `grad_out` is the upstream gradient with respect to the output block;
/// the return value is the gradient with respect to the (unsymmetrized)
/// input block, i.e. it includes the chain through the symmetrization.
pub fn inv_sqrt_floor_backward(
    grad_out: &[f64],
    ctx: &SpectralCtx,
    n: usize,
    eps: f64,
) -> Vec<f64> {
    let g = |l: f64| 1.0 / l.max(eps).sqrt();
    // g'(l) = -1/2 * l^{-3/2} above the floor, zero where the floor is active.
    let dg = |l: f64| if l > eps { -0.5 / (l * l.sqrt()) } else { 0.0 };
    let q = &ctx.q;
    let lambda = &ctx.lambda;
    // m = Q^T grad_out Q
    let mut qt_g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += q[k * n + i] * grad_out[k * n + j];
            }
            qt_g[i * n + j] = acc;
        }
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += qt_g[i * n + k] * q[k * n + j];
            }
            m[i * n + j] = acc;
        }
    }
    // Scale by divided differences of g.
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (lambda[i], lambda[j]);
            let f = if (li - lj).abs() < 1e-9 {
                dg(0.5 * (li + lj))
            } else {
                (g(li) - g(lj)) / (li - lj)
            };
            m[i * n + j] *= f;
        }
    }
    // h = Q m Q^T
    let mut qm = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += q[i * n + k] * m[k * n + j];
            }
            qm[i * n + j] = acc;
        }
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += qm[i * n + k] * q[j * n + k];
            }
            h[i * n + j] = acc;
        }
    }
    // Chain through the symmetrization (A -> (A + A^T)/2).
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (h[i * n + j] + h[j * n + i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = vec![4.0, 1.0, -2.0, 1.0, 3.0, 0.5, -2.0, 0.5, 5.0];
        let (q, lambda) = sym_eig(&a, 3);
        // q * diag(lambda) * q^T
        let mut ql = q.clone();
        for i in 0..3 {
            for j in 0..3 {
                ql[i * 3 + j] = q[i * 3 + j] * lambda[j];
            }
        }
        let mut qt = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                qt[i * 3 + j] = q[j * 3 + i];
            }
        }
        let rec = matmul(&ql, &qt, 3);
        for (x, y) in rec.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn inv_sqrt_inverts_square() {
        // s = a^{-1/2}, then s * a * s should be the identity.
        let a = vec![2.0, 0.5, 0.5, 1.0];
        let (s, _) = inv_sqrt_floor(&a, 2, 1e-8);
        let sas = matmul(&matmul(&s, &a, 2), &s, 2);
        let id = [1.0, 0.0, 0.0, 1.0];
        for (x, y) in sas.iter().zip(&id) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_handles_singular_blocks() {
        let a = vec![0.0, 0.0, 0.0, 0.0];
        let (s, _) = inv_sqrt_floor(&a, 2, 1e-8);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1e4).abs() < 1e-6); // 1/sqrt(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let a = vec![3.0, 0.7, -0.2, 0.7, 2.0, 0.4, -0.2, 0.4, 1.5];
        let n = 3;
        let eps = 1e-8;
        // Loss = <c, f(A)> for a fixed c.
        let c: Vec<f64> = (0..9).map(|i| 0.3 + 0.1 * i as f64).collect();
        let loss = |a: &[f64]| -> f64 {
            let (out, _) = inv_sqrt_floor(a, n, eps);
            out.iter().zip(&c).map(|(x, y)| x * y).sum()
        };
        let (_, ctx) = inv_sqrt_floor(&a, n, eps);
        let grad = inv_sqrt_floor_backward(&c, &ctx, n, eps);
        let h = 1e-6;
        for i in 0..9 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += h;
            am[i] -= h;
            let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() / fd.abs().max(1.0) < 1e-6,
                "entry {i}: ad {} vs fd {fd}",
                grad[i]
            );
        }
    }
}
