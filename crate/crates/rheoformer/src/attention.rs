//! Softmax-free attention kernels (Fourier and Galerkin types),
//! cross-attention for arbitrary query points, and the frozen random
//! Fourier projection of coordinates.
//!
//! Both self-attention kinds are quadrature contractions of learned basis
//! functions; no softmax appears anywhere. The Galerkin/cross form is kept
//! factored as `Q (K^T V) / n` so cost stays linear in the point count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, RheoError};
use crate::tensor::{Matrix, Tape, TensorId};

/// Fourier-type kernel: `Z = (Q K^T) V / n`.
pub fn fourier_attention(tape: &mut Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let n = check_self_shapes(tape, q, k, v)?;
    let kt = tape.transpose(k);
    let qk = tape.matmul(q, kt)?;
    let z = tape.matmul(qk, v)?;
    Ok(tape.scale(z, 1.0 / n as f64))
}

/// Galerkin-type kernel in factored form: `Z = Q (K^T V) / n`.
pub fn galerkin_attention(tape: &mut Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let n = check_self_shapes(tape, q, k, v)?;
    let kt = tape.transpose(k);
    let kv = tape.matmul(kt, v)?;
    let z = tape.matmul(q, kv)?;
    Ok(tape.scale(z, 1.0 / n as f64))
}

/// Cross-attention: query rows encode output locations, keys/values encode
/// input locations; `m` may differ from `n`. Row `j` of the output depends
/// on the query set only through row `j` of `Q`.
pub fn cross_attention(tape: &mut Tape, q_query: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let (n, dk) = tape.shape(k);
    let (nv, dv) = tape.shape(v);
    let (_, dq) = tape.shape(q_query);
    if n != nv {
        return Err(RheoError::ShapeMismatch { op: "cross_attention k/v", lhs: (n, dk), rhs: (nv, dv) });
    }
    if dq != dk {
        return Err(RheoError::ShapeMismatch { op: "cross_attention q/k", lhs: tape.shape(q_query), rhs: (n, dk) });
    }
    let kt = tape.transpose(k);
    let kv = tape.matmul(kt, v)?;
    let z = tape.matmul(q_query, kv)?;
    Ok(tape.scale(z, 1.0 / n as f64))
}

fn check_self_shapes(tape: &Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<usize> {
    let sq = tape.shape(q);
    let sk = tape.shape(k);
    let sv = tape.shape(v);
    if sq != sk {
        return Err(RheoError::ShapeMismatch { op: "attention q/k", lhs: sq, rhs: sk });
    }
    if sk.0 != sv.0 {
        return Err(RheoError::ShapeMismatch { op: "attention k/v", lhs: sk, rhs: sv });
    }
    Ok(sq.0)
}

/// Frozen Gaussian projection for coordinates. `B` is drawn once from
/// `N(0, sigma^2)` and never trained.
#[derive(Debug, Clone)]
pub struct FourierFeatureMap {
    /// `d1 x d2` projection matrix.
    pub b: Matrix,
    pub sigma: f64,
}

impl FourierFeatureMap {
    pub fn new(coord_dim: usize, d2: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
        let data: Vec<f64> = (0..coord_dim * d2).map(|_| normal.sample(&mut rng)).collect();
        Self { b: Matrix::new(coord_dim, d2, data), sigma }
    }

    pub fn from_matrix(b: Matrix, sigma: f64) -> Self {
        Self { b, sigma }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.cols
    }

    /// `gamma(Y) = [cos(2 pi Y B), sin(2 pi Y B)]`, columns concatenated.
    pub fn project(&self, coords: &Matrix) -> Result<Matrix> {
        if coords.cols != self.b.rows {
            return Err(RheoError::ShapeMismatch {
                op: "random_fourier_project",
                lhs: (coords.rows, coords.cols),
                rhs: (self.b.rows, self.b.cols),
            });
        }
        let m = coords.rows;
        let d1 = self.b.rows;
        let d2 = self.b.cols;
        let tau = 2.0 * std::f64::consts::PI;
        let mut out = Matrix::zeros(m, 2 * d2);
        for r in 0..m {
            for c in 0..d2 {
                let mut dot = 0.0;
                for k in 0..d1 {
                    dot += coords.get(r, k) * self.b.get(k, c);
                }
                out.set(r, c, (tau * dot).cos());
                out.set(r, d2 + c, (tau * dot).sin());
            }
        }
        Ok(out)
    }
}

/// Convenience free function mirroring the kernel ops.
pub fn random_fourier_project(coords: &Matrix, map: &FourierFeatureMap) -> Result<Matrix> {
    map.project(coords)
}
