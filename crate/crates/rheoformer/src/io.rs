//! On-disk formats: the `RHEO1` dataset container and model checkpoints.
//!
//! Both files share one layout: a 5-byte magic, a little-endian u64 byte
//! count, a UTF-8 JSON header (hand-inspectable; unknown keys are
//! ignored), and a payload of little-endian f64 values whose length the
//! header declares exactly. All writes go to a temporary sibling file and
//! are renamed into place, so a partial file never parses.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{ChannelInfo, Dataset, SampleRecord, TaskKind};
use crate::error::{Result, RheoError};
use crate::model::{ModelConfig, RheoModel};
use crate::tensor::Matrix;
use crate::training::{AdamState, ChannelStats, EpochRecord, ResumeState, TrainConfig};

pub const DATASET_MAGIC: &[u8; 5] = b"RHEO1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"RHEC1";

// ---------------------------------------------------------------------------
// Shared low-level helpers
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn assemble(magic: &[u8; 5], header: &[u8], payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 8 + header.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits raw file bytes into (header, payload floats), validating the
/// magic and every declared length.
fn disassemble(magic: &[u8; 5], name: &'static str, bytes: &[u8]) -> Result<(Vec<u8>, Vec<f64>)> {
    if bytes.len() < 13 || &bytes[..5] != magic {
        return Err(RheoError::MagicMismatch { expected: name });
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if header_len > body.len() {
        return Err(RheoError::SizeMismatch { declared: header_len as u64, actual: body.len() as u64 });
    }
    let header = body[..header_len].to_vec();
    let rest = &body[header_len..];
    if rest.len() % 8 != 0 {
        return Err(RheoError::SizeMismatch {
            declared: (rest.len() / 8 * 8) as u64,
            actual: rest.len() as u64,
        });
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct DatasetHeader {
    task: TaskKind,
    n_samples: usize,
    n_points: usize,
    n_steps: usize,
    coord_dim: usize,
    dt: f64,
    channels: Vec<ChannelInfo>,
    metadata: Vec<BTreeMap<String, f64>>,
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let header = DatasetHeader {
        task: ds.task,
        n_samples: ds.samples.len(),
        n_points: ds.n_points(),
        n_steps: ds.n_steps,
        coord_dim: ds.coord_dim(),
        dt: ds.dt,
        channels: ds.channels.clone(),
        metadata: ds.samples.iter().map(|s| s.metadata.clone()).collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| RheoError::Header(e.to_string()))?;
    let mut payload = ds.coords.data.clone();
    for s in &ds.samples {
        payload.extend_from_slice(&s.fields);
    }
    write_atomic(path, &assemble(DATASET_MAGIC, &header, &payload))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_all(path)?;
    let (header, payload) = disassemble(DATASET_MAGIC, "RHEO1", &bytes)?;
    let h: DatasetHeader =
        serde_json::from_slice(&header).map_err(|e| RheoError::Header(e.to_string()))?;
    if h.metadata.len() != h.n_samples {
        return Err(RheoError::Header(format!(
            "{} metadata records for {} samples",
            h.metadata.len(),
            h.n_samples
        )));
    }
    let coord_len = h.n_points * h.coord_dim;
    let sample_len = h.n_steps * h.n_points * h.channels.len();
    let declared = coord_len + h.n_samples * sample_len;
    if payload.len() != declared {
        return Err(RheoError::SizeMismatch {
            declared: 8 * declared as u64,
            actual: 8 * payload.len() as u64,
        });
    }
    let coords = Matrix::new(h.n_points, h.coord_dim, payload[..coord_len].to_vec());
    let samples = (0..h.n_samples)
        .map(|i| {
            let start = coord_len + i * sample_len;
            SampleRecord {
                fields: payload[start..start + sample_len].to_vec(),
                metadata: h.metadata[i].clone(),
            }
        })
        .collect();
    let ds = Dataset { task: h.task, dt: h.dt, n_steps: h.n_steps, coords, channels: h.channels, samples };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

/// One weight (or optimizer-moment) array: name, shape, payload slot.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    model_config: ModelConfig,
    train_config: TrainConfig,
    stats: ChannelStats,
    model_seed: u64,
    completed_epochs: usize,
    best_val_loss: f64,
    adam_step: u64,
    adam_skipped: u64,
    /// ChaCha word position of the shuffle stream, kept as a string
    /// because JSON numbers cannot carry a u128 exactly.
    rng_word_pos: String,
    history: Vec<EpochRecord>,
    /// Payload layout, in order: current weights, best-validation weights,
    /// Adam first moments, Adam second moments — each one block per entry.
    arrays: Vec<ArrayEntry>,
}

/// Complete training state: enough to run inference (best weights + stats)
/// and to resume optimization bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub stats: ChannelStats,
    pub model_seed: u64,
    pub completed_epochs: usize,
    pub best_val_loss: f64,
    pub rng_word_pos: u128,
    pub history: Vec<EpochRecord>,
    pub arrays: Vec<ArrayEntry>,
    pub params: Vec<Vec<f64>>,
    pub best_params: Vec<Vec<f64>>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn from_training(
        model: &RheoModel,
        train_config: &TrainConfig,
        stats: &ChannelStats,
        resume: &ResumeState,
    ) -> Self {
        let arrays = model
            .params
            .entries
            .iter()
            .map(|p| ArrayEntry { name: p.name.clone(), rows: p.rows, cols: p.cols, trainable: p.trainable })
            .collect();
        Self {
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            stats: stats.clone(),
            model_seed: model.seed,
            completed_epochs: resume.completed_epochs,
            best_val_loss: resume.best_val_loss,
            rng_word_pos: resume.rng_word_pos,
            history: resume.history.clone(),
            arrays,
            params: model.params.entries.iter().map(|p| p.data.clone()).collect(),
            best_params: resume.best_params.clone(),
            adam: resume.adam.clone(),
        }
    }

    /// Rebuilds the model carrying the *current* (final-state) weights.
    pub fn model(&self) -> Result<RheoModel> {
        self.model_with(&self.params)
    }

    /// Rebuilds the model carrying the best-validation weights — the
    /// inference configuration.
    pub fn best_model(&self) -> Result<RheoModel> {
        self.model_with(&self.best_params)
    }

    fn model_with(&self, weights: &[Vec<f64>]) -> Result<RheoModel> {
        let mut model = RheoModel::new(self.model_config.clone(), self.model_seed)?;
        if weights.len() != model.params.entries.len() {
            return Err(RheoError::Config(format!(
                "checkpoint holds {} arrays, model needs {}",
                weights.len(),
                model.params.entries.len()
            )));
        }
        for (entry, data) in self.arrays.iter().zip(weights) {
            model.params.load_named(&entry.name, data)?;
        }
        Ok(model)
    }

    pub fn resume_state(&self) -> ResumeState {
        ResumeState {
            adam: self.adam.clone(),
            rng_word_pos: self.rng_word_pos,
            completed_epochs: self.completed_epochs,
            best_params: self.best_params.clone(),
            best_val_loss: self.best_val_loss,
            history: self.history.clone(),
        }
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    for (i, a) in ck.arrays.iter().enumerate() {
        if ck.arrays[..i].iter().any(|o| o.name == a.name) {
            return Err(RheoError::Config(format!("duplicate array name {}", a.name)));
        }
    }
    let header = CheckpointHeader {
        model_config: ck.model_config.clone(),
        train_config: ck.train_config.clone(),
        stats: ck.stats.clone(),
        model_seed: ck.model_seed,
        completed_epochs: ck.completed_epochs,
        best_val_loss: ck.best_val_loss,
        adam_step: ck.adam.step,
        adam_skipped: ck.adam.skipped,
        rng_word_pos: ck.rng_word_pos.to_string(),
        history: ck.history.clone(),
        arrays: ck.arrays.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| RheoError::Header(e.to_string()))?;
    let mut payload = Vec::new();
    for block in [&ck.params, &ck.best_params, &ck.adam.m, &ck.adam.v] {
        if block.len() != ck.arrays.len() {
            return Err(RheoError::Config(format!(
                "checkpoint block holds {} arrays, manifest declares {}",
                block.len(),
                ck.arrays.len()
            )));
        }
        for (entry, data) in ck.arrays.iter().zip(block.iter()) {
            if data.len() != entry.rows * entry.cols {
                return Err(RheoError::Config(format!(
                    "array {}: {} values for shape {}x{}",
                    entry.name,
                    data.len(),
                    entry.rows,
                    entry.cols
                )));
            }
            payload.extend_from_slice(data);
        }
    }
    write_atomic(path, &assemble(CHECKPOINT_MAGIC, &header, &payload))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_all(path)?;
    let (header, payload) = disassemble(CHECKPOINT_MAGIC, "RHEC1", &bytes)?;
    let h: CheckpointHeader =
        serde_json::from_slice(&header).map_err(|e| RheoError::Header(e.to_string()))?;
    let per_block: usize = h.arrays.iter().map(|a| a.rows * a.cols).sum();
    let declared = 4 * per_block;
    if payload.len() != declared {
        return Err(RheoError::SizeMismatch {
            declared: 8 * declared as u64,
            actual: 8 * payload.len() as u64,
        });
    }
    let rng_word_pos: u128 = h
        .rng_word_pos
        .parse()
        .map_err(|_| RheoError::Header(format!("bad rng_word_pos {:?}", h.rng_word_pos)))?;
    let mut cursor = 0usize;
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut block = Vec::with_capacity(h.arrays.len());
        for a in &h.arrays {
            let len = a.rows * a.cols;
            block.push(payload[cursor..cursor + len].to_vec());
            cursor += len;
        }
        blocks.push(block);
    }
    let v = blocks.pop().unwrap();
    let m = blocks.pop().unwrap();
    let best_params = blocks.pop().unwrap();
    let params = blocks.pop().unwrap();
    Ok(Checkpoint {
        model_config: h.model_config,
        train_config: h.train_config,
        stats: h.stats,
        model_seed: h.model_seed,
        completed_epochs: h.completed_epochs,
        best_val_loss: h.best_val_loss,
        rng_word_pos,
        history: h.history,
        arrays: h.arrays,
        params,
        best_params,
        adam: AdamState { m, v, step: h.adam_step, skipped: h.adam_skipped },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelRole;
    use crate::training::AdamConfig;

    fn toy_dataset() -> Dataset {
        let coords = Matrix::new(3, 1, vec![0.0, 0.5, 1.0]);
        let channels = vec![
            ChannelInfo::new("gdot", "1/s", ChannelRole::Input),
            ChannelInfo::new("sigma", "Pa", ChannelRole::Output),
        ];
        let samples = (0..2)
            .map(|i| {
                let mut metadata = BTreeMap::new();
                metadata.insert("wi".to_string(), 0.5 + i as f64);
                SampleRecord {
                    fields: (0..12).map(|j| (i * 12 + j) as f64 * 0.25 - 1.0).collect(),
                    metadata,
                }
            })
            .collect();
        Dataset { task: TaskKind::Rheometric, dt: 0.1, n_steps: 2, coords, channels, samples }
    }

    #[test]
    fn dataset_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        let ds = toy_dataset();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
        // read-then-write reproduces the file byte for byte
        let path2 = dir.path().join("toy2.rheo");
        write_dataset(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn dataset_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        write_dataset(&path, &toy_dataset()).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [bytes.len() - 8, bytes.len() - 3, 20, 4] {
            let path_cut = dir.path().join("cut.rheo");
            fs::write(&path_cut, &bytes[..cut]).unwrap();
            let err = read_dataset(&path_cut).unwrap_err();
            assert!(
                matches!(err, RheoError::SizeMismatch { .. } | RheoError::MagicMismatch { .. }),
                "cut at {cut}: unexpected {err:?}"
            );
        }
    }

    #[test]
    fn dataset_magic_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        write_dataset(&path, &toy_dataset()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(RheoError::MagicMismatch { .. })));
    }

    #[test]
    fn dataset_corrupt_header_is_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        write_dataset(&path, &toy_dataset()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[14] = b'!';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(RheoError::Header(_))));
    }

    #[test]
    fn dataset_duplicate_channels_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy_dataset();
        ds.channels[1].name = "gdot".into();
        let err = write_dataset(&dir.path().join("dup.rheo"), &ds).unwrap_err();
        assert!(matches!(err, RheoError::DuplicateChannel(_)));
    }

    #[test]
    fn dataset_unknown_header_keys_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        let ds = toy_dataset();
        write_dataset(&path, &ds).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[13..13 + header_len]).unwrap();
        header["future_extension"] = serde_json::json!({"version": 2});
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut rebuilt = Vec::new();
        rebuilt.extend_from_slice(DATASET_MAGIC);
        rebuilt.extend_from_slice(&(new_header.len() as u64).to_le_bytes());
        rebuilt.extend_from_slice(&new_header);
        rebuilt.extend_from_slice(&bytes[13 + header_len..]);
        fs::write(&path, &rebuilt).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    fn toy_checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            in_channels: 1,
            out_channels: 1,
            coord_dim: 1,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            ffn_hidden: 8,
            propagator_hidden: 8,
            fourier_d2: 4,
            ..ModelConfig::default()
        };
        let model = RheoModel::new(cfg, 42).unwrap();
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 7,
            adam: AdamConfig::default(),
            ..TrainConfig::default()
        };
        let stats = ChannelStats { mean: vec![0.1, -0.2], std: vec![1.5, 0.7] };
        let resume = ResumeState {
            adam: AdamState::for_model(&model),
            rng_word_pos: (u64::MAX as u128) + 12345,
            completed_epochs: 3,
            best_params: model.params.entries.iter().map(|p| p.data.clone()).collect(),
            best_val_loss: 0.025,
            history: vec![EpochRecord { epoch: 0, train_loss: 1.0, val_loss: 1.1 }],
        };
        Checkpoint::from_training(&model, &tcfg, &stats, &resume)
    }

    #[test]
    fn checkpoint_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = toy_checkpoint();
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
        let path2 = dir.path().join("model2.ckpt");
        write_checkpoint(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_restores_identical_model() {
        let ck = toy_checkpoint();
        let model = ck.model().unwrap();
        for (entry, data) in ck.arrays.iter().zip(&ck.params) {
            let p = model.params.by_name(&entry.name).unwrap();
            assert_eq!(&p.data, data);
        }
        // same predictions as a freshly bound model must be deterministic
        let coords = Matrix::new(3, 1, vec![0.0, 0.5, 1.0]);
        let values = Matrix::new(3, 1, vec![0.2, -0.4, 0.9]);
        let a = model.predict_function(&values, &coords, &coords).unwrap();
        let b = ck.best_model().unwrap().predict_function(&values, &coords, &coords).unwrap();
        assert_eq!(a.data, b.data); // best == current in this toy state
    }

    #[test]
    fn checkpoint_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &toy_checkpoint()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(RheoError::SizeMismatch { .. })));
    }

    #[test]
    fn checkpoint_magic_distinct_from_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &toy_checkpoint()).unwrap();
        assert!(matches!(read_dataset(&path), Err(RheoError::MagicMismatch { .. })));
    }

    /// A 2-D CFD export — a (y, x) point cloud with planar velocity and
    /// stress-tensor channels — round-trips through the container and feeds
    /// straight into training. The fixture reshapes 1-D channel-flow truth
    /// into that layout: fields repeat at both x-stations and the transverse
    /// components vanish.
    #[test]
    fn external_2d_export_accepted_and_trainable() {
        use crate::flow1d::{solve_startup_channel, ChannelConfig};
        use crate::model::{ModelConfig, RheoModel};
        use crate::training::{config_for_dataset, fit, make_example, ChannelStats, TrainConfig};

        let mut cfg = ChannelConfig {
            gap: 1.0,
            ny: 8,
            rho: 1.0,
            eta_s: 0.5,
            eta_p: 0.5,
            tau1: 0.3,
            dpdx: -1.0,
            dt: 1.0,
            t_end: 1.0,
        };
        cfg.dt = 0.5 * cfg.dt_stability_bound();
        let sol = solve_startup_channel(&cfg, 4).unwrap();
        let ny = sol.grid.len();
        let x_stations = [0.25, 0.75];
        let mut coords = Vec::new();
        for &x in &x_stations {
            for &y in &sol.grid {
                coords.extend_from_slice(&[y, x]);
            }
        }
        let mut fields = Vec::new();
        for snap in 0..sol.n_snapshots {
            for _ in &x_stations {
                for p in 0..ny {
                    let (u, sxy, sxx) =
                        (sol.value(snap, p, 0), sol.value(snap, p, 1), sol.value(snap, p, 2));
                    fields.extend_from_slice(&[u, 0.0, sxx, 0.0, sxy]);
                }
            }
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("wi".to_string(), sol.weissenberg());
        let ds = Dataset {
            task: TaskKind::SpatioTemporal,
            dt: sol.snapshot_dt,
            n_steps: sol.n_snapshots,
            coords: Matrix::new(2 * ny, 2, coords),
            channels: vec![
                ChannelInfo::new("u_x", "m/s", ChannelRole::Both),
                ChannelInfo::new("u_y", "m/s", ChannelRole::Both),
                ChannelInfo::new("sigma_xx", "Pa", ChannelRole::Both),
                ChannelInfo::new("sigma_yy", "Pa", ChannelRole::Both),
                ChannelInfo::new("sigma_xy", "Pa", ChannelRole::Both),
            ],
            samples: vec![SampleRecord { fields, metadata }],
        };
        ds.validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contraction.rheo");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);

        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            seed: 1,
            context_steps: 2,
            condition_key: "wi".into(),
            ..TrainConfig::default()
        };
        let mcfg = config_for_dataset(
            &back,
            &tcfg,
            ModelConfig {
                d_model: 8,
                n_heads: 2,
                n_encoder_layers: 1,
                ffn_hidden: 8,
                propagator_hidden: 8,
                propagator_layers: 1,
                fourier_d2: 4,
                ..ModelConfig::default()
            },
        );
        let mut model = RheoModel::new(mcfg, 1).unwrap();
        let stats = ChannelStats::from_dataset(&back, &[0]);
        let ex = vec![make_example(&back, &stats, &tcfg, 0).unwrap()];
        let out = fit(&mut model, &ex, &ex, &tcfg, None, |_| {}).unwrap();
        assert!(out.best_val_loss.is_finite());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.rheo");
        write_dataset(&path, &toy_dataset()).unwrap();
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["toy.rheo".to_string()]);
    }
}
