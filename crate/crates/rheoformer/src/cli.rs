//! Command-line workflows: dataset generation, training, prediction,
//! evaluation, and plotting.
//!
//! Every subcommand that consumes randomness takes `--seed`; when absent,
//! the `RHEO_SEED` environment variable is the fallback (then 0). Runs
//! with equal seeds and inputs are bit-reproducible.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{ChannelRole, Dataset, SampleRecord, TaskKind};
use crate::flow1d::{generate_flow_dataset, ChannelConfig};
use crate::generate::{generate_rheometric, ConstitutiveKind, Protocol, RheometricConfig};
use crate::io::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint};
use crate::model::{AttentionKind, ModelConfig, RheoModel};
use crate::plot::{heatmap, line_plot, write_csv, Series};
use crate::tensor::Matrix;
use crate::training::{
    evaluate, fit, make_example, predict_sample, stratified_split, ChannelStats, EvalReport,
    Example, ResumeState, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "rheo", version, about = "Neural-operator surrogates for non-Newtonian fluid mechanics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Tevp,
    Giesekus,
    Oldroydb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Grf,
    Oscillatory,
    Shear,
    Extension,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotWhat {
    Series,
    Heatmap,
    Error,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a rheometric dataset (deformation protocol -> stress).
    GenRheometric {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 16)]
        n_samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 101)]
        n_points: usize,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1.0)]
        rate_scale: f64,
        /// Optional JSON file with a full generation config; CLI flags
        /// override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate start-up channel-flow sequences over a pressure-gradient sweep.
    GenFlow1d {
        #[arg(long, default_value_t = 16)]
        n_samples: usize,
        #[arg(long, allow_hyphen_values = true, default_value_t = -2.0)]
        dpdx_min: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -0.5)]
        dpdx_max: f64,
        #[arg(long, default_value_t = 32)]
        ny: usize,
        #[arg(long, default_value_t = 26)]
        n_snapshots: usize,
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate on a dataset and write a checkpoint plus a loss
    /// history table.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Optional JSON file with "model" and "train" override sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from an existing checkpoint (bit-identical to an
        /// uninterrupted run).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict fields for every sample of a dataset and write them as a
    /// dataset file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Conditioning snapshots for spatio-temporal data.
        #[arg(long, default_value_t = 10)]
        condition_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write a JSON report plus per-point error
    /// fields.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        condition_steps: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Emit an SVG plot (with a CSV sidecar of the exact numbers).
    Plot {
        /// Dataset file (for series/heatmap) — mutually exclusive with --report.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation report (for error plots).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        what: PlotWhat,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Channel index for heatmaps.
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_seed(explicit: Option<u64>) -> u64 {
    explicit
        .or_else(|| std::env::var("RHEO_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

/// Picks the stratification key from the metadata the dataset carries.
fn infer_condition_key(ds: &Dataset) -> String {
    for key in ["condition", "wi", "dpdx"] {
        if ds.samples.iter().any(|s| s.metadata.contains_key(key)) {
            return key.to_string();
        }
    }
    "condition".to_string()
}

// ---------------------------------------------------------------------------
// Config file overrides
// ---------------------------------------------------------------------------

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    d_model: Option<usize>,
    n_heads: Option<usize>,
    n_encoder_layers: Option<usize>,
    attention: Option<AttentionKind>,
    ffn_hidden: Option<usize>,
    propagator_hidden: Option<usize>,
    propagator_layers: Option<usize>,
    fourier_d2: Option<usize>,
    fourier_sigma: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lr_decay: Option<f64>,
    clip_norm: Option<f64>,
    context_steps: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: ModelOverrides,
    #[serde(default)]
    train: TrainOverrides,
}

fn load_file_config(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn apply_overrides(fc: &FileConfig) -> (ModelConfig, TrainConfig) {
    let mut m = ModelConfig::default();
    let o = &fc.model;
    if let Some(v) = o.d_model { m.d_model = v }
    if let Some(v) = o.n_heads { m.n_heads = v }
    if let Some(v) = o.n_encoder_layers { m.n_encoder_layers = v }
    if let Some(v) = o.attention { m.attention = v }
    if let Some(v) = o.ffn_hidden { m.ffn_hidden = v }
    if let Some(v) = o.propagator_hidden { m.propagator_hidden = v }
    if let Some(v) = o.propagator_layers { m.propagator_layers = v }
    if let Some(v) = o.fourier_d2 { m.fourier_d2 = v }
    if let Some(v) = o.fourier_sigma { m.fourier_sigma = v }
    let mut t = TrainConfig::default();
    let o = &fc.train;
    if let Some(v) = o.epochs { t.epochs = v }
    if let Some(v) = o.batch_size { t.batch_size = v }
    if let Some(v) = o.lr { t.adam.lr = v }
    if let Some(v) = o.lr_decay { t.lr_decay = v }
    if let Some(v) = o.clip_norm { t.adam.clip_norm = v }
    if let Some(v) = o.context_steps { t.context_steps = v }
    (m, t)
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn cmd_gen_rheometric(
    model: ModelArg,
    protocol: ProtocolArg,
    n_samples: usize,
    seed: Option<u64>,
    n_points: usize,
    t_end: f64,
    rate_scale: f64,
    config: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let kind = match model {
        ModelArg::Tevp => ConstitutiveKind::Tevp,
        ModelArg::Giesekus => ConstitutiveKind::Giesekus,
        ModelArg::Oldroydb => ConstitutiveKind::OldroydB,
    };
    let protocol = match protocol {
        ProtocolArg::Grf => Protocol::Grf,
        ProtocolArg::Oscillatory => Protocol::Oscillatory,
        ProtocolArg::Shear => Protocol::Shear,
        ProtocolArg::Extension => Protocol::Extension,
    };
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut file_cfg: RheometricConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            file_cfg.kind = kind;
            file_cfg.protocol = protocol;
            file_cfg
        }
        None => RheometricConfig::new(kind, protocol),
    };
    cfg.n_samples = n_samples;
    cfg.seed = resolve_seed(seed);
    cfg.n_points = n_points;
    cfg.t_end = t_end;
    cfg.rate_scale = rate_scale;
    let ds = generate_rheometric(&cfg)?;
    write_dataset(out, &ds)?;
    println!(
        "wrote {} samples x {} points to {}",
        ds.samples.len(),
        ds.n_points(),
        out.display()
    );
    Ok(())
}

fn cmd_gen_flow1d(
    n_samples: usize,
    dpdx_min: f64,
    dpdx_max: f64,
    ny: usize,
    n_snapshots: usize,
    t_end: f64,
    out: &Path,
) -> anyhow::Result<()> {
    if n_samples == 0 {
        bail!("--n-samples must be positive");
    }
    let mut base = ChannelConfig {
        gap: 1.0,
        ny,
        rho: 1.0,
        eta_s: 0.5,
        eta_p: 0.5,
        tau1: 0.5,
        dpdx: dpdx_min,
        dt: 1.0,
        t_end,
    };
    base.dt = 0.5 * base.dt_stability_bound();
    let dpdx_values: Vec<f64> = (0..n_samples)
        .map(|i| {
            if n_samples == 1 {
                dpdx_min
            } else {
                dpdx_min + (dpdx_max - dpdx_min) * i as f64 / (n_samples - 1) as f64
            }
        })
        .collect();
    let ds = generate_flow_dataset(&base, &dpdx_values, n_snapshots)?;
    write_dataset(out, &ds)?;
    println!(
        "wrote {} sequences ({} snapshots x {} points) to {}",
        ds.samples.len(),
        ds.n_steps,
        ds.n_points(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    resume: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let ds = read_dataset(data)?;
    let fc = load_file_config(config)?;
    let (base_model, mut tcfg) = apply_overrides(&fc);
    tcfg.seed = resolve_seed(seed);
    if let Some(e) = epochs {
        tcfg.epochs = e;
    }
    tcfg.condition_key = infer_condition_key(&ds);

    let split = stratified_split(&ds, &tcfg.condition_key);
    let stats = ChannelStats::from_dataset(&ds, &split.train);
    let build = |idx: &[usize]| -> crate::error::Result<Vec<Example>> {
        idx.iter().map(|&s| make_example(&ds, &stats, &tcfg, s)).collect()
    };
    let train_examples = build(&split.train)?;
    let val_examples = build(&split.val)?;

    let (mut model, resume_state, tcfg) = match resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            println!(
                "resuming from {} at epoch {}",
                p.display(),
                ck.completed_epochs
            );
            let model = ck.model()?;
            let mut t = ck.train_config.clone();
            if let Some(e) = epochs {
                t.epochs = e;
            }
            (model, Some(ck.resume_state()), t)
        }
        None => {
            let mcfg = crate::training::config_for_dataset(&ds, &tcfg, base_model);
            (RheoModel::new(mcfg, tcfg.seed)?, None, tcfg)
        }
    };
    println!(
        "training on {} samples (val {}, test {}), {} trainable values",
        train_examples.len(),
        val_examples.len(),
        split.test.len(),
        model.params.n_trainable_values()
    );
    let outcome = fit(&mut model, &train_examples, &val_examples, &tcfg, resume_state, |rec| {
        println!(
            "epoch {:>4}  train {:.6}  val {:.6}",
            rec.epoch, rec.train_loss, rec.val_loss
        );
    })?;
    let final_resume = ResumeState {
        adam: outcome.adam.clone(),
        rng_word_pos: outcome.rng_word_pos,
        completed_epochs: tcfg.epochs,
        best_params: outcome.best_params.clone(),
        best_val_loss: outcome.best_val_loss,
        history: outcome.history.clone(),
    };
    let ck = Checkpoint::from_training(&model, &tcfg, &stats, &final_resume);
    write_checkpoint(out, &ck)?;
    // loss-history table next to the checkpoint
    let columns = vec!["epoch".to_string(), "train_loss".to_string(), "val_loss".to_string()];
    let rows: Vec<Vec<f64>> = outcome
        .history
        .iter()
        .map(|r| vec![r.epoch as f64, r.train_loss, r.val_loss])
        .collect();
    write_csv(&out.with_extension("history.csv"), &columns, &rows)?;
    println!(
        "wrote checkpoint to {} (best val loss {:.6})",
        out.display(),
        outcome.best_val_loss
    );
    Ok(())
}

fn checkpoint_train_config(ck: &Checkpoint, condition_steps: usize) -> TrainConfig {
    TrainConfig { context_steps: condition_steps, ..ck.train_config.clone() }
}

fn cmd_predict(checkpoint: &Path, data: &Path, condition_steps: usize, out: &Path) -> anyhow::Result<()> {
    let ck = read_checkpoint(checkpoint)?;
    let ds = read_dataset(data)?;
    let model = ck.best_model()?;
    let tcfg = checkpoint_train_config(&ck, condition_steps);
    let out_cols = ds.output_channels();
    let mut samples = Vec::with_capacity(ds.samples.len());
    let mut n_steps = 0usize;
    for s in 0..ds.samples.len() {
        let preds = predict_sample(&model, &ds, &ck.stats, &tcfg, s)?;
        n_steps = preds.len();
        let mut fields = Vec::with_capacity(n_steps * ds.n_points() * out_cols.len());
        for p in &preds {
            fields.extend_from_slice(&p.data);
        }
        samples.push(SampleRecord { fields, metadata: ds.samples[s].metadata.clone() });
    }
    let predicted = Dataset {
        task: ds.task,
        dt: ds.dt,
        n_steps,
        coords: ds.coords.clone(),
        channels: out_cols
            .iter()
            .map(|&c| {
                let mut info = ds.channels[c].clone();
                info.role = ChannelRole::Output;
                info
            })
            .collect(),
        samples,
    };
    write_dataset(out, &predicted)?;
    println!(
        "wrote {} predicted steps for {} samples to {}",
        n_steps,
        predicted.samples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, condition_steps: usize, report_path: &Path) -> anyhow::Result<()> {
    let ck = read_checkpoint(checkpoint)?;
    let ds = read_dataset(data)?;
    if ds.task == TaskKind::SpatioTemporal && ds.n_steps <= condition_steps {
        bail!(
            "--condition-steps {} needs a dataset with more than {} steps",
            condition_steps,
            condition_steps
        );
    }
    let model = ck.best_model()?;
    let tcfg = checkpoint_train_config(&ck, condition_steps);
    let report = evaluate(&model, &ds, &ck.stats, &tcfg, &[])?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(report_path, &text)?;
    if ds.task == TaskKind::SpatioTemporal {
        println!("predicted steps per sample: {}", ds.n_steps - condition_steps);
    }
    for (name, err) in report.channel_names.iter().zip(&report.per_channel_rel_l2_mean) {
        println!("channel {name}: mean relative L2 {err:.4}");
    }
    println!(
        "{:.1}% of points below 25% local error; report written to {}",
        100.0 * report.fraction_below_25_mean,
        report_path.display()
    );
    Ok(())
}

fn cmd_plot(
    data: Option<&Path>,
    report: Option<&Path>,
    what: PlotWhat,
    sample: usize,
    channel: usize,
    out: &Path,
) -> anyhow::Result<()> {
    match what {
        PlotWhat::Series => {
            let path = data.context("--data is required for series plots")?;
            let ds = read_dataset(path)?;
            if sample >= ds.samples.len() {
                bail!("sample {} out of range ({} samples)", sample, ds.samples.len());
            }
            if ds.coord_dim() != 1 {
                bail!("series plots need 1-D coordinates");
            }
            let x: Vec<f64> = (0..ds.n_points()).map(|p| ds.coords.get(p, 0)).collect();
            let step = if ds.task == TaskKind::Rheometric { 0 } else { ds.n_steps - 1 };
            let series: Vec<Series> = ds
                .channels
                .iter()
                .enumerate()
                .map(|(c, info)| Series {
                    label: format!("{} ({})", info.name, info.unit),
                    y: (0..ds.n_points()).map(|p| ds.value(sample, step, p, c)).collect(),
                })
                .collect();
            line_plot(out, &format!("sample {sample}"), "coordinate", "value", &x, &series)?;
        }
        PlotWhat::Heatmap => {
            let path = data.context("--data is required for heatmaps")?;
            let ds = read_dataset(path)?;
            if sample >= ds.samples.len() || channel >= ds.n_channels() {
                bail!("sample or channel out of range");
            }
            let mut m = Matrix::zeros(ds.n_steps, ds.n_points());
            for step in 0..ds.n_steps {
                for p in 0..ds.n_points() {
                    m.set(step, p, ds.value(sample, step, p, channel));
                }
            }
            let name = &ds.channels[channel].name;
            heatmap(out, &format!("{name}, sample {sample}"), "point", "step", &m)?;
        }
        PlotWhat::Error => {
            let path = report.context("--report is required for error plots")?;
            let text = std::fs::read_to_string(path)?;
            let rep: EvalReport = serde_json::from_str(&text).context("parsing report")?;
            let x: Vec<f64> = rep
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| s.condition.unwrap_or(i as f64))
                .collect();
            let mut series: Vec<Series> = rep
                .channel_names
                .iter()
                .enumerate()
                .map(|(c, name)| Series {
                    label: format!("rel L2 {name}"),
                    y: rep.samples.iter().map(|s| s.per_channel_rel_l2[c]).collect(),
                })
                .collect();
            series.push(Series {
                label: "fraction below 25%".into(),
                y: rep.samples.iter().map(|s| s.fraction_below_25).collect(),
            });
            line_plot(out, "evaluation errors", "condition", "error", &x, &series)?;
        }
    }
    println!("wrote {} and {}", out.display(), out.with_extension("csv").display());
    Ok(())
}

/// Runs one parsed invocation; errors bubble to `main` for a nonzero exit.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenRheometric {
            model,
            protocol,
            n_samples,
            seed,
            n_points,
            t_end,
            rate_scale,
            config,
            out,
        } => cmd_gen_rheometric(
            model,
            protocol,
            n_samples,
            seed,
            n_points,
            t_end,
            rate_scale,
            config.as_deref(),
            &out,
        ),
        Command::GenFlow1d { n_samples, dpdx_min, dpdx_max, ny, n_snapshots, t_end, out } => {
            cmd_gen_flow1d(n_samples, dpdx_min, dpdx_max, ny, n_snapshots, t_end, &out)
        }
        Command::Train { data, config, seed, epochs, resume, out } => {
            cmd_train(&data, config.as_deref(), seed, epochs, resume.as_deref(), &out)
        }
        Command::Predict { checkpoint, data, condition_steps, out } => {
            cmd_predict(&checkpoint, &data, condition_steps, &out)
        }
        Command::Eval { checkpoint, data, condition_steps, report } => {
            cmd_eval(&checkpoint, &data, condition_steps, &report)
        }
        Command::Plot { data, report, what, sample, channel, out } => {
            cmd_plot(data.as_deref(), report.as_deref(), what, sample, channel, &out)
        }
    }
}
