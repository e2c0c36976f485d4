//! Deformation-history generators: Gaussian-random-field samples for
//! training and canonical rheometric protocols for testing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constitutive::VelocityGradient2;
use crate::error::{Result, RheoError};

/// Configuration of a squared-exponential Gaussian random field on a
/// uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrfConfig {
    pub n_points: usize,
    /// Horizon (s); samples live on `[0, t_end]`.
    pub t_end: f64,
    /// Kernel correlation time (s).
    pub length_scale: f64,
    /// Standard deviation of the field (1/s).
    pub amplitude: f64,
    /// Diagonal regularizer added to the covariance.
    pub jitter: f64,
}

impl GrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2
            || !(self.length_scale > 0.0)
            || !(self.amplitude >= 0.0)
            || !(self.jitter > 0.0)
            || !(self.t_end > 0.0)
        {
            return Err(RheoError::Config(format!("invalid GRF config: {self:?}")));
        }
        Ok(())
    }

    /// Defaults scaled to the horizon: correlation time a tenth of the
    /// horizon, unit amplitude.
    pub fn for_horizon(n_points: usize, t_end: f64) -> Self {
        Self { n_points, t_end, length_scale: 0.1 * t_end, amplitude: 1.0, jitter: 1e-10 }
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let dt = self.t_end / (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| i as f64 * dt).collect()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// stored row-major. Kept in-repo so sampling stays dependency-free and
/// bit-reproducible.
fn cholesky_lower(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(RheoError::Factorization(format!(
                        "non-positive pivot {s} at row {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Reusable sampler: the covariance factorization is shared across draws.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    config: GrfConfig,
    chol: Vec<f64>,
}

impl GrfSampler {
    pub fn new(config: GrfConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_points;
        let grid = config.time_grid();
        let mut cov = vec![0.0; n * n];
        let a2 = config.amplitude * config.amplitude;
        for i in 0..n {
            for j in 0..n {
                let d = grid[i] - grid[j];
                cov[i * n + j] =
                    a2 * (-d * d / (2.0 * config.length_scale * config.length_scale)).exp();
            }
            cov[i * n + i] += config.jitter;
        }
        let chol = cholesky_lower(&cov, n)?;
        Ok(Self { config, chol })
    }

    pub fn config(&self) -> &GrfConfig {
        &self.config
    }

    /// One zero-mean draw, deterministic per seed.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let n = self.config.n_points;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.chol[i * n + k] * z[k];
            }
            out[i] = s;
        }
        // a zero-amplitude field is exactly zero, not jitter-sized noise
        if self.config.amplitude == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }
}

/// One-shot GRF draw on the configured time grid.
pub fn sample_grf(config: &GrfConfig, seed: u64) -> Result<Vec<f64>> {
    Ok(GrfSampler::new(*config)?.sample(seed))
}

/// Oscillatory shear protocol: returns `(gamma_dot, gamma)` with
/// `gamma(t) = gamma0 sin(omega t)`.
pub fn oscillatory_shear(gamma0: f64, omega: f64, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(omega > 0.0) {
        return Err(RheoError::Config("omega must be positive".into()));
    }
    let gamma_dot = grid.iter().map(|&t| gamma0 * omega * (omega * t).cos()).collect();
    let gamma = grid.iter().map(|&t| gamma0 * (omega * t).sin()).collect();
    Ok((gamma_dot, gamma))
}

/// Constant homogeneous flow protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FlowKind {
    SimpleShear,
    PlanarExtension,
}

/// Constant velocity-gradient history of the given kind, one entry per grid
/// point.
pub fn homogeneous_flow(kind: FlowKind, rate: f64, grid: &[f64]) -> Vec<VelocityGradient2> {
    let l = match kind {
        FlowKind::SimpleShear => VelocityGradient2::simple_shear(rate),
        FlowKind::PlanarExtension => VelocityGradient2::planar_extension(rate),
    };
    vec![l; grid.len()]
}
