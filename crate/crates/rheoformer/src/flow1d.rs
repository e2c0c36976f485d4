//! Transient start-up of pressure-driven Oldroyd-B flow in a planar
//! channel, solved by finite differences. Supplies desk-scale
//! spatio-temporal ground truth with the shape points x channels x time.
//!
//! The polymer/solvent split used here is the standard Oldroyd-B
//! decomposition: total stress = solvent part `eta_s du/dy` plus polymer
//! extra stress `tau` with viscosity `eta_p`. In the (G0, tau1, tau2)
//! parametrization of the homogeneous-flow integrator this corresponds to
//! `eta_s = G0 tau2`, `eta_p = G0 (tau1 - tau2)`; the mapping is exercised
//! against the 0-D integrator in the tests.

use std::collections::BTreeMap;

use crate::data::{ChannelInfo, ChannelRole, Dataset, SampleRecord, TaskKind};
use crate::error::{Result, RheoError};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelConfig {
    /// Gap width (m).
    pub gap: f64,
    /// Interior grid points.
    pub ny: usize,
    /// Density (kg/m^3).
    pub rho: f64,
    /// Solvent viscosity (Pa.s).
    pub eta_s: f64,
    /// Polymer viscosity (Pa.s).
    pub eta_p: f64,
    /// Relaxation time (s).
    pub tau1: f64,
    /// Pressure gradient (Pa/m), any sign.
    pub dpdx: f64,
    /// Time step (s); must satisfy the diffusive stability bound.
    pub dt: f64,
    /// Horizon (s).
    pub t_end: f64,
}

impl ChannelConfig {
    pub fn spacing(&self) -> f64 {
        self.gap / (self.ny + 1) as f64
    }

    /// Diffusive stability bound for the explicit scheme.
    pub fn dt_stability_bound(&self) -> f64 {
        self.rho * self.spacing() * self.spacing() / (2.0 * (self.eta_s + self.eta_p))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0)
            || self.ny < 8
            || !(self.rho > 0.0)
            || !(self.eta_s > 0.0)
            || !(self.eta_p > 0.0)
            || !(self.tau1 > 0.0)
            || !(self.dt > 0.0)
            || !(self.t_end > 0.0)
            || !self.dpdx.is_finite()
        {
            return Err(RheoError::Config(format!("invalid channel config: {self:?}")));
        }
        if self.dt > self.dt_stability_bound() {
            return Err(RheoError::Config(format!(
                "dt {} exceeds stability bound {}",
                self.dt,
                self.dt_stability_bound()
            )));
        }
        Ok(())
    }

    /// Interior node positions.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.ny).map(|i| i as f64 * h).collect()
    }

    /// Analytic steady velocity profile (parabolic Poiseuille).
    pub fn steady_velocity(&self, y: f64) -> f64 {
        -self.dpdx / (2.0 * (self.eta_s + self.eta_p)) * y * (self.gap - y)
    }

    /// Analytic steady polymer shear stress `eta_p du/dy`.
    pub fn steady_sigma_xy(&self, y: f64) -> f64 {
        -self.dpdx / (2.0 * (self.eta_s + self.eta_p)) * self.eta_p * (self.gap - 2.0 * y)
    }
}

/// Raw solver output: snapshots of `(u_x, sigma_xy, sigma_xx)` on interior
/// nodes at uniform times (snapshot 0 is the initial rest state).
#[derive(Debug, Clone)]
pub struct ChannelSolution {
    pub config: ChannelConfig,
    /// Interior node positions (ny values).
    pub grid: Vec<f64>,
    /// Snapshot interval (s).
    pub snapshot_dt: f64,
    /// `n_snapshots x ny x 3` values, channel order `(u_x, sigma_xy, sigma_xx)`.
    pub fields: Vec<f64>,
    pub n_snapshots: usize,
    /// Largest |u| observed over the run.
    pub u_max: f64,
}

impl ChannelSolution {
    pub fn value(&self, snap: usize, point: usize, channel: usize) -> f64 {
        self.fields[(snap * self.grid.len() + point) * 3 + channel]
    }

    /// Weissenberg number `tau1 U_max / gap`.
    pub fn weissenberg(&self) -> f64 {
        self.config.tau1 * self.u_max / self.config.gap
    }
}

/// Explicit finite-difference integration of the coupled momentum /
/// Oldroyd-B system from rest, with no-slip walls. Records `n_snapshots`
/// uniformly spaced states including the initial one.
pub fn solve_startup_channel(config: &ChannelConfig, n_snapshots: usize) -> Result<ChannelSolution> {
    config.validate()?;
    if n_snapshots < 2 {
        return Err(RheoError::Config("need at least 2 snapshots".into()));
    }
    let ny = config.ny;
    let h = config.spacing();
    let interval = config.t_end / (n_snapshots - 1) as f64;
    // shrink dt so snapshots land on step boundaries exactly
    let steps_per_snap = (interval / config.dt).ceil() as usize;
    let dt = interval / steps_per_snap as f64;

    let mut u = vec![0.0; ny];
    // polymer stresses live on all nodes including the walls
    let mut txy = vec![0.0; ny + 2];
    let mut txx = vec![0.0; ny + 2];
    let mut fields = Vec::with_capacity(n_snapshots * ny * 3);
    let mut u_max = 0.0f64;

    let record = |fields: &mut Vec<f64>, u: &[f64], txy: &[f64], txx: &[f64]| {
        for i in 0..ny {
            fields.push(u[i]);
            fields.push(txy[i + 1]);
            fields.push(txx[i + 1]);
        }
    };
    record(&mut fields, &u, &txy, &txx);

    let u_at = |u: &[f64], j: isize| -> f64 {
        // full-grid index: walls at 0 and ny+1 carry u = 0
        if j <= 0 || j as usize >= ny + 1 {
            0.0
        } else {
            u[j as usize - 1]
        }
    };
    let mut du = vec![0.0; ny];
    let mut dudy = vec![0.0; ny + 2];
    let mut step_index = 0usize;
    for _ in 1..n_snapshots {
        for _ in 0..steps_per_snap {
            step_index += 1;
            // velocity gradient on all nodes: centered interior, one-sided walls
            dudy[0] = (4.0 * u_at(&u, 1) - u_at(&u, 2)) / (2.0 * h);
            for j in 1..=ny {
                dudy[j] = (u_at(&u, j as isize + 1) - u_at(&u, j as isize - 1)) / (2.0 * h);
            }
            dudy[ny + 1] = (u_at(&u, ny as isize - 1) - 4.0 * u_at(&u, ny as isize)) / (2.0 * h);

            for i in 0..ny {
                let j = i as isize + 1;
                let lap = (u_at(&u, j - 1) - 2.0 * u[i] + u_at(&u, j + 1)) / (h * h);
                let dtxy = (txy[i + 2] - txy[i]) / (2.0 * h);
                du[i] = (-config.dpdx + config.eta_s * lap + dtxy) / config.rho;
            }
            for i in 0..ny {
                u[i] += dt * du[i];
            }
            for j in 0..ny + 2 {
                let txy_new = txy[j] + dt * (config.eta_p * dudy[j] - txy[j]) / config.tau1;
                let txx_new = txx[j] + dt * (-txx[j] / config.tau1 + 2.0 * txy[j] * dudy[j]);
                txy[j] = txy_new;
                txx[j] = txx_new;
            }
            if u.iter().any(|v| !v.is_finite()) || txy.iter().any(|v| !v.is_finite()) {
                return Err(RheoError::Diverged { step: step_index });
            }
        }
        for &v in &u {
            u_max = u_max.max(v.abs());
        }
        record(&mut fields, &u, &txy, &txx);
    }

    Ok(ChannelSolution {
        config: *config,
        grid: config.grid(),
        snapshot_dt: interval,
        fields,
        n_snapshots,
        u_max,
    })
}

/// One dataset sample per `dpdx` value, all on the same grid and time
/// stamps; `Wi` and `dpdx` are recorded in each sample's metadata.
pub fn generate_flow_dataset(
    base: &ChannelConfig,
    dpdx_values: &[f64],
    n_snapshots: usize,
) -> Result<Dataset> {
    use rayon::prelude::*;
    let solutions: Vec<ChannelSolution> = dpdx_values
        .par_iter()
        .map(|&dpdx| solve_startup_channel(&ChannelConfig { dpdx, ..*base }, n_snapshots))
        .collect::<Result<_>>()?;
    let grid = base.grid();
    let coords = Matrix::new(grid.len(), 1, grid);
    let samples = solutions
        .iter()
        .map(|sol| {
            let mut metadata = BTreeMap::new();
            metadata.insert("dpdx".into(), sol.config.dpdx);
            metadata.insert("wi".into(), sol.weissenberg());
            SampleRecord { fields: sol.fields.clone(), metadata }
        })
        .collect();
    let ds = Dataset {
        task: TaskKind::SpatioTemporal,
        dt: solutions[0].snapshot_dt,
        n_steps: n_snapshots,
        coords,
        channels: vec![
            ChannelInfo::new("u_x", "m/s", ChannelRole::Both),
            ChannelInfo::new("sigma_xy", "Pa", ChannelRole::Both),
            ChannelInfo::new("sigma_xx", "Pa", ChannelRole::Both),
        ],
        samples,
    };
    ds.validate()?;
    Ok(ds)
}
