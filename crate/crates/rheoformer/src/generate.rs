//! Rheometric dataset generation: deformation protocols from `signals`
//! driven through the `constitutive` integrators, packaged as `Dataset`
//! records (one "step", time as the coordinate axis).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::constitutive::{
    integrate_giesekus, integrate_oldroydb, integrate_tevp, GiesekusParams, OldroydBParams,
    TevpParams, TevpState, VelocityGradient2,
};
use crate::data::{ChannelInfo, ChannelRole, Dataset, SampleRecord, TaskKind};
use crate::error::{Result, RheoError};
use crate::signals::{oscillatory_shear, GrfConfig, GrfSampler};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstitutiveKind {
    Tevp,
    Giesekus,
    OldroydB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Gaussian-random-field shear-rate histories (the training protocol).
    Grf,
    /// Oscillatory shear with per-sample amplitude and frequency.
    Oscillatory,
    /// Constant simple shear, rate swept across samples.
    Shear,
    /// Constant planar extension, rate swept across samples (tensor
    /// models only).
    Extension,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RheometricConfig {
    pub kind: ConstitutiveKind,
    pub protocol: Protocol,
    pub n_samples: usize,
    /// Points on the time grid (the coordinate axis).
    pub n_points: usize,
    /// Horizon (s).
    pub t_end: f64,
    pub seed: u64,
    /// Deformation-rate scale: GRF amplitude, oscillatory γ̇ peak, or the
    /// top of the constant-rate sweep (1/s).
    pub rate_scale: f64,
    pub tevp: TevpParams,
    pub giesekus: GiesekusParams,
    pub oldroydb: OldroydBParams,
}

impl RheometricConfig {
    pub fn new(kind: ConstitutiveKind, protocol: Protocol) -> Self {
        Self {
            kind,
            protocol,
            n_samples: 16,
            n_points: 101,
            t_end: 10.0,
            seed: 0,
            rate_scale: 1.0,
            tevp: crate::constitutive::default_tevp_params(),
            // relaxation times follow the shipped example configurations
            // (1 s Giesekus, 0.1 s Oldroyd-B); other constants are chosen
            // for a well-conditioned desk-scale problem
            giesekus: GiesekusParams { tau1: 1.0, tau2: 0.1, g0: 1.0, alpha: 0.3 },
            oldroydb: OldroydBParams { tau1: 0.1, tau2: 0.01, g0: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_points < 2 || !(self.t_end > 0.0) || !(self.rate_scale > 0.0) {
            return Err(RheoError::Config(format!("invalid rheometric config: {self:?}")));
        }
        if self.kind == ConstitutiveKind::Tevp && self.protocol == Protocol::Extension {
            return Err(RheoError::Config(
                "the scalar shear model has no extensional mode".into(),
            ));
        }
        match self.kind {
            ConstitutiveKind::Tevp => self.tevp.validate(),
            ConstitutiveKind::Giesekus => self.giesekus.validate(),
            ConstitutiveKind::OldroydB => self.oldroydb.validate(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_end / (self.n_points - 1) as f64
    }
}

/// The deformation-rate history of one sample plus its condition metadata.
struct ProtocolSample {
    rate: Vec<f64>,
    metadata: BTreeMap<String, f64>,
}

fn protocol_samples(cfg: &RheometricConfig) -> Result<Vec<ProtocolSample>> {
    let grid: Vec<f64> = (0..cfg.n_points).map(|i| i as f64 * cfg.dt()).collect();
    let n = cfg.n_samples;
    match cfg.protocol {
        Protocol::Grf => {
            let grf = GrfSampler::new(GrfConfig {
                amplitude: cfg.rate_scale,
                ..GrfConfig::for_horizon(cfg.n_points, cfg.t_end)
            })?;
            Ok((0..n)
                .map(|i| {
                    let rate = grf.sample(cfg.seed.wrapping_add(i as u64));
                    let rms = (rate.iter().map(|v| v * v).sum::<f64>() / rate.len() as f64).sqrt();
                    let mut metadata = BTreeMap::new();
                    metadata.insert("condition".into(), rms);
                    metadata.insert("grf_seed".into(), cfg.seed.wrapping_add(i as u64) as f64);
                    ProtocolSample { rate, metadata }
                })
                .collect())
        }
        Protocol::Oscillatory => (0..n)
            .map(|i| {
                let u = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                let omega = 2.0 * std::f64::consts::PI * (0.2 + 0.8 * u) / cfg.t_end * 10.0;
                let gamma0 = cfg.rate_scale / omega;
                let (rate, _) = oscillatory_shear(gamma0, omega, &grid)?;
                let mut metadata = BTreeMap::new();
                metadata.insert("condition".into(), omega);
                metadata.insert("gamma0".into(), gamma0);
                metadata.insert("omega".into(), omega);
                Ok(ProtocolSample { rate, metadata })
            })
            .collect(),
        Protocol::Shear | Protocol::Extension => Ok((0..n)
            .map(|i| {
                let u = if n == 1 { 1.0 } else { (i + 1) as f64 / n as f64 };
                let r = cfg.rate_scale * u;
                let mut metadata = BTreeMap::new();
                metadata.insert("condition".into(), r);
                metadata.insert("rate".into(), r);
                ProtocolSample { rate: vec![r; cfg.n_points], metadata }
            })
            .collect()),
    }
}

/// Generates one rheometric dataset: the deformation-rate channel as
/// input, the stress response of the chosen constitutive model as output.
/// Deterministic per (config, seed); samples integrate in parallel.
pub fn generate_rheometric(cfg: &RheometricConfig) -> Result<Dataset> {
    cfg.validate()?;
    let dt = cfg.dt();
    let inputs = protocol_samples(cfg)?;
    let grid: Vec<f64> = (0..cfg.n_points).map(|i| i as f64 * dt).collect();
    let coords = Matrix::new(cfg.n_points, 1, grid);

    let channels = match cfg.kind {
        ConstitutiveKind::Tevp => vec![
            ChannelInfo::new("gamma_dot", "1/s", ChannelRole::Input),
            ChannelInfo::new("sigma_12", "Pa", ChannelRole::Output),
            ChannelInfo::new("lambda", "-", ChannelRole::Output),
        ],
        // symmetric stress, but all four components are emitted
        // (sigma_yx duplicates sigma_xy by construction)
        ConstitutiveKind::Giesekus | ConstitutiveKind::OldroydB => vec![
            ChannelInfo::new("rate", "1/s", ChannelRole::Input),
            ChannelInfo::new("sigma_xx", "Pa", ChannelRole::Output),
            ChannelInfo::new("sigma_yy", "Pa", ChannelRole::Output),
            ChannelInfo::new("sigma_xy", "Pa", ChannelRole::Output),
            ChannelInfo::new("sigma_yx", "Pa", ChannelRole::Output),
        ],
    };
    let n_channels = channels.len();

    let samples: Vec<SampleRecord> = inputs
        .par_iter()
        .map(|input| -> Result<SampleRecord> {
            let mut fields = Vec::with_capacity(cfg.n_points * n_channels);
            match cfg.kind {
                ConstitutiveKind::Tevp => {
                    let init = TevpState { sigma12: 0.0, lambda: 1.0 };
                    let states = integrate_tevp(&cfg.tevp, &input.rate, dt, init)?;
                    for (g, s) in input.rate.iter().zip(&states) {
                        fields.extend_from_slice(&[*g, s.sigma12, s.lambda]);
                    }
                }
                ConstitutiveKind::Giesekus | ConstitutiveKind::OldroydB => {
                    let l_series: Vec<VelocityGradient2> = input
                        .rate
                        .iter()
                        .map(|&r| match cfg.protocol {
                            Protocol::Extension => VelocityGradient2::planar_extension(r),
                            _ => VelocityGradient2::simple_shear(r),
                        })
                        .collect();
                    let init = crate::constitutive::SymTensor2 { xx: 0.0, yy: 0.0, xy: 0.0 };
                    let stresses = match cfg.kind {
                        ConstitutiveKind::Giesekus => {
                            integrate_giesekus(&cfg.giesekus, &l_series, dt, init)?
                        }
                        _ => integrate_oldroydb(&cfg.oldroydb, &l_series, dt, init)?,
                    };
                    for (r, s) in input.rate.iter().zip(&stresses) {
                        fields.extend_from_slice(&[*r, s.xx, s.yy, s.xy, s.xy]);
                    }
                }
            }
            Ok(SampleRecord { fields, metadata: input.metadata.clone() })
        })
        .collect::<Result<_>>()?;

    let ds = Dataset { task: TaskKind::Rheometric, dt, n_steps: 1, coords, channels, samples };
    ds.validate()?;
    Ok(ds)
}
