//! In-memory dataset container shared by the generators, the training
//! loop, and the on-disk format.
//!
//! One container serves both data shapes: rheometric records use the time
//! grid as the (1-D) coordinate axis with a single "step", spatio-temporal
//! records use spatial points and many steps.

use std::collections::BTreeMap;

use crate::error::{Result, RheoError};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Input function on a time grid maps to an output function on the
    /// same kind of grid in a single encoder/decoder pass.
    Rheometric,
    /// First-k-snapshot conditioning followed by latent rollout.
    SpatioTemporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Input,
    Output,
    /// Conditioned on and predicted (the spatio-temporal case).
    Both,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub unit: String,
    pub role: ChannelRole,
}

impl ChannelInfo {
    pub fn new(name: &str, unit: &str, role: ChannelRole) -> Self {
        Self { name: name.into(), unit: unit.into(), role }
    }
}

/// One record: `n_steps x n_points x n_channels` values (row-major in that
/// order) plus free-form numeric metadata (Wi, dpdx, protocol constants).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub fields: Vec<f64>,
    pub metadata: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    /// Time between steps (s). For rheometric data this is the spacing of
    /// the coordinate (time) grid.
    pub dt: f64,
    pub n_steps: usize,
    /// Point locations, `n_points x coord_dim`.
    pub coords: Matrix,
    pub channels: Vec<ChannelInfo>,
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    pub fn n_points(&self) -> usize {
        self.coords.rows
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.cols
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_len(&self) -> usize {
        self.n_steps * self.n_points() * self.n_channels()
    }

    pub fn value(&self, sample: usize, step: usize, point: usize, channel: usize) -> f64 {
        let np = self.n_points();
        let nc = self.n_channels();
        self.samples[sample].fields[(step * np + point) * nc + channel]
    }

    /// One step of one sample as an `n_points x n_channels` matrix.
    pub fn step_matrix(&self, sample: usize, step: usize) -> Matrix {
        let np = self.n_points();
        let nc = self.n_channels();
        let start = step * np * nc;
        Matrix::new(np, nc, self.samples[sample].fields[start..start + np * nc].to_vec())
    }

    pub fn channel_indices(&self, role: ChannelRole) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == role || c.role == ChannelRole::Both)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn input_channels(&self) -> Vec<usize> {
        self.channel_indices(ChannelRole::Input)
    }

    pub fn output_channels(&self) -> Vec<usize> {
        self.channel_indices(ChannelRole::Output)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(RheoError::Config("dataset dt must be positive".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|o| o.name == c.name) {
                return Err(RheoError::DuplicateChannel(c.name.clone()));
            }
        }
        let expect = self.sample_len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.fields.len() != expect {
                return Err(RheoError::Config(format!(
                    "sample {i} has {} values, expected {expect}",
                    s.fields.len()
                )));
            }
        }
        Ok(())
    }
}
