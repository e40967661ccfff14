//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand, ValueEnum};

use noisyseg::correction::JoScope;
use noisyseg::data::{
    build_manifest, load_mask, save_mask, synth_shapes_raw, write_dataset, DataSource,
};
use noisyseg::experiment::{
    merge_run_reports, run_experiment, DatasetSpec, ExperimentSpec, RunArtifacts, RunOptions,
};
use noisyseg::metrics::{emit_table, ResultRow, TableFormat};
use noisyseg::model::ModelConfig;
use noisyseg::morphology::{corrupt_dataset, NoiseSpec, OpMode};
use noisyseg::plots::{plot_bars, plot_curves};
use noisyseg::trainer::{Strategy, TrainConfig};

const DATA_ROOT_ENV: &str = "NOISYSEG_DATA_ROOT";

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseModeArg {
    Erode,
    Dilate,
    RandomChoice,
}

impl From<NoiseModeArg> for OpMode {
    fn from(m: NoiseModeArg) -> Self {
        match m {
            NoiseModeArg::Erode => OpMode::Erode,
            NoiseModeArg::Dilate => OpMode::Dilate,
            NoiseModeArg::RandomChoice => OpMode::RandomChoice,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Vanilla,
    CoteachSmallLoss,
    Ss,
    SsJo,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Vanilla => Strategy::Vanilla,
            StrategyArg::CoteachSmallLoss => Strategy::CoteachSmallLoss,
            StrategyArg::Ss => Strategy::Ss,
            StrategyArg::SsJo => Strategy::SsJo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JoScopeArg {
    UnselectedOnly,
    AllSamples,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Markdown,
    Json,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Markdown => TableFormat::Markdown,
            FormatArg::Json => TableFormat::Json,
        }
    }
}

// ---------------------------------------------------------------- synth-data

#[derive(Args)]
pub struct SynthDataArgs {
    /// Total number of samples to generate.
    #[arg(long, default_value_t = 300)]
    count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train split size recorded in the manifest (default 2/3 of count).
    #[arg(long)]
    train_count: Option<usize>,
    /// Test split size recorded in the manifest (default the remainder).
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn synth_data(args: SynthDataArgs) -> anyhow::Result<()> {
    let samples = synth_shapes_raw(args.count, args.size, args.seed)?;
    write_dataset(&args.out, &samples)?;
    let train_count = args.train_count.unwrap_or(args.count * 2 / 3);
    let test_count = args.test_count.unwrap_or(args.count - train_count);
    if train_count + test_count > args.count {
        bail!(noisyseg::Error::InvalidConfig(format!(
            "split {train_count}+{test_count} exceeds count {}",
            args.count
        )));
    }
    let manifest = build_manifest(
        &args.out,
        train_count,
        test_count,
        args.size,
        args.split_seed,
        DataSource::Synthetic,
    )?;
    manifest.save(&args.out.join("manifest.json"))?;
    println!(
        "wrote {} samples ({}x{}) to {} (split {}/{})",
        args.count,
        args.size,
        args.size,
        args.out.display(),
        train_count,
        test_count
    );
    Ok(())
}

// ------------------------------------------------------------------- corrupt

#[derive(Args)]
pub struct CorruptArgs {
    /// Dataset directory containing masks/.
    #[arg(long, env = DATA_ROOT_ENV)]
    data: PathBuf,
    /// Fraction of masks to corrupt.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 5)]
    iter_min: u32,
    #[arg(long, default_value_t = 15)]
    iter_max: u32,
    #[arg(long, value_enum, default_value_t = NoiseModeArg::RandomChoice)]
    mode: NoiseModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for corrupted masks and the corruption log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(serde::Serialize)]
struct CorruptionLine<'a> {
    id: &'a str,
    op: String,
    n: u32,
    dice_vs_clean: f64,
}

pub fn corrupt(args: CorruptArgs) -> anyhow::Result<()> {
    let masks_dir = args.data.join("masks");
    let mut ids: Vec<String> = std::fs::read_dir(&masks_dir)
        .with_context(|| format!("reading {}", masks_dir.display()))?
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".png").map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        bail!(noisyseg::Error::EmptyDataset(format!(
            "no masks in {}",
            masks_dir.display()
        )));
    }
    let masks = ids
        .iter()
        .map(|id| load_mask(&masks_dir.join(format!("{id}.png"))))
        .collect::<noisyseg::Result<Vec<_>>>()?;

    let spec = NoiseSpec::new(args.ratio, args.iter_min, args.iter_max, args.mode.into(), args.seed)?;
    let (corrupted, log) = corrupt_dataset(&masks, &spec)?;

    let out_masks = args.out.join("masks");
    std::fs::create_dir_all(&out_masks)?;
    for (id, mask) in ids.iter().zip(&corrupted) {
        save_mask(&out_masks.join(format!("{id}.png")), mask)?;
    }
    let mut log_text = String::new();
    for entry in &log.entries {
        let line = CorruptionLine {
            id: &ids[entry.index],
            op: entry.op.to_string(),
            n: entry.iterations,
            dice_vs_clean: entry.dice_after,
        };
        log_text.push_str(&serde_json::to_string(&line)?);
        log_text.push('\n');
    }
    std::fs::write(args.out.join("corruption_log.jsonl"), log_text)?;
    println!(
        "corrupted {}/{} masks into {} (mean dice vs clean {:.4})",
        log.len(),
        ids.len(),
        args.out.display(),
        log.mean_dice_after().unwrap_or(1.0)
    );
    Ok(())
}

// --------------------------------------------------------------------- train

/// Dataset/training/noise flags shared by `train` and `ablate`. Every value
/// is optional so that explicit flags can override a `--spec` file.
#[derive(Args, Clone)]
pub struct TrainOpts {
    /// Experiment spec file (JSON); flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dataset directory (standard layout + manifest.json).
    #[arg(long, env = DATA_ROOT_ENV)]
    data: Option<PathBuf>,
    /// Manifest path when it is not <data>/manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Force the built-in synthetic dataset even if a data root is set.
    #[arg(long, default_value_t = false)]
    synthetic: bool,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    /// Image side length (synthetic data and model input).
    #[arg(long)]
    size: Option<usize>,
    /// Seed of the synthetic dataset content (fixed across runs).
    #[arg(long)]
    data_seed: Option<u64>,

    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Exponential learning-rate decay factor per epoch.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,

    /// Fraction of training masks to corrupt.
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long)]
    iter_min: Option<u32>,
    #[arg(long)]
    iter_max: Option<u32>,
    #[arg(long, value_enum)]
    noise_mode: Option<NoiseModeArg>,

    /// Joint-optimization start epoch k.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, short = 'T')]
    temperature: Option<f64>,
    /// Uncertainty-filter keep fraction tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Small-loss keep fraction R.
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long, value_enum)]
    jo_scope: Option<JoScopeArg>,
    /// Peers averaged into the corrected label (2 or 3).
    #[arg(long)]
    peer_count: Option<u8>,
    #[arg(long)]
    hard_corrected_targets: bool,

    /// Max augmentation rotation in degrees.
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    flip_prob: Option<f64>,

    /// Comma-separated seeds; one run per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Suppress per-epoch progress lines.
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

impl TrainOpts {
    /// Desk-scale defaults: synthetic 200/100 at 64x64, depth-3 base-8
    /// model, 30 epochs of batch 16 at lr 0.02.
    fn default_spec() -> ExperimentSpec {
        let mut train = TrainConfig::new(ModelConfig::desk(), Strategy::SsJo);
        train.epochs = 30;
        train.batch_size = 16;
        train.learning_rate = 0.02;
        train.correction.jo_start_epoch = 10;
        ExperimentSpec {
            dataset: DatasetSpec::Synthetic {
                train_count: 200,
                test_count: 100,
                size: 64,
                seed: 2024,
            },
            noise: NoiseSpec::new(0.5, 3, 8, OpMode::RandomChoice, 0)
                .expect("default noise spec is valid"),
            train,
            seeds: vec![0],
        }
    }

    fn resolve(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading spec {}", path.display()))?;
                // accept either a bare spec or a run-directory config.json
                match serde_json::from_str::<ExperimentSpec>(&text) {
                    Ok(s) => s,
                    Err(_) => {
                        let record: noisyseg::experiment::RunRecord = serde_json::from_str(&text)
                            .with_context(|| format!("parsing spec {}", path.display()))?;
                        record.spec
                    }
                }
            }
            None => Self::default_spec(),
        };

        // dataset overrides
        if let Some(dir) = &self.data {
            if !self.synthetic {
                spec.dataset = DatasetSpec::Directory {
                    root: dir.clone(),
                    manifest: self.manifest.clone(),
                };
            }
        }
        if self.synthetic || matches!(spec.dataset, DatasetSpec::Synthetic { .. }) {
            let (mut tc, mut vc, mut sz, mut ds) = match spec.dataset {
                DatasetSpec::Synthetic {
                    train_count,
                    test_count,
                    size,
                    seed,
                } => (train_count, test_count, size, seed),
                _ => (200, 100, 64, 2024),
            };
            if let Some(v) = self.train_count {
                tc = v;
            }
            if let Some(v) = self.test_count {
                vc = v;
            }
            if let Some(v) = self.size {
                sz = v;
            }
            if let Some(v) = self.data_seed {
                ds = v;
            }
            spec.dataset = DatasetSpec::Synthetic {
                train_count: tc,
                test_count: vc,
                size: sz,
                seed: ds,
            };
        }

        if let Some(v) = self.noise_ratio {
            spec.noise.ratio = v;
        }
        if let Some(v) = self.iter_min {
            spec.noise.iter_min = v;
        }
        if let Some(v) = self.iter_max {
            spec.noise.iter_max = v;
        }
        if let Some(v) = self.noise_mode {
            spec.noise.op_mode = v.into();
        }

        let t = &mut spec.train;
        if let Some(v) = self.strategy {
            t.strategy = v.into();
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.gamma {
            t.lr_decay_gamma = v;
        }
        if let Some(v) = self.depth {
            t.model.depth = v;
        }
        if let Some(v) = self.base_channels {
            t.model.base_channels = v;
        }
        if let Some(v) = self.size {
            t.model.input_hw = (v, v);
        }
        if let Some(v) = self.k {
            t.correction.jo_start_epoch = v;
        }
        if let Some(v) = self.alpha {
            t.correction.alpha = v;
        }
        if let Some(v) = self.temperature {
            t.correction.temperature = v;
        }
        if let Some(v) = self.tau {
            t.selection.uncertainty_keep_fraction = v;
        }
        if let Some(v) = self.keep_fraction {
            t.selection.keep_fraction = v;
        }
        if let Some(v) = self.jo_scope {
            t.correction.jo_scope = match v {
                JoScopeArg::UnselectedOnly => JoScope::UnselectedOnly,
                JoScopeArg::AllSamples => JoScope::AllSamples,
            };
        }
        if let Some(v) = self.peer_count {
            t.correction.peer_count = match v {
                2 => noisyseg::correction::PeerCount::Two,
                3 => noisyseg::correction::PeerCount::Three,
                other => bail!(noisyseg::Error::InvalidConfig(format!(
                    "peer count must be 2 or 3, got {other}"
                ))),
            };
        }
        if self.hard_corrected_targets {
            t.correction.hard_corrected_targets = true;
        }
        if let Some(v) = self.rotation {
            t.augment.rotation_deg = v;
        }
        if let Some(v) = self.flip_prob {
            t.augment.flip_prob = v;
        }
        if !self.seeds.is_empty() {
            spec.seeds = self.seeds.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            checkpoint_every: self.checkpoint_every,
            verbose: !self.quiet,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let spec = args.opts.resolve()?;
    let artifacts = run_experiment(&spec, &args.out, &args.opts.run_options())?;
    let rows: Vec<ResultRow> = artifacts.iter().map(|a| a.row.clone()).collect();
    print!("{}", emit_table(&rows, TableFormat::Csv)?);
    for a in &artifacts {
        eprintln!("run dir: {}", a.dir.display());
    }
    Ok(())
}

// -------------------------------------------------------------------- ablate

#[derive(Subcommand)]
pub enum AblateCmd {
    /// Sweep the joint-loss weight alpha.
    Alpha(AblateAlphaArgs),
    /// Compare sample-selection criteria.
    Selection(AblateSelectionArgs),
    /// Compare SS against vanilla at 100% noise for fixed noise levels.
    Noise100(AblateNoise100Args),
}

#[derive(Args)]
pub struct AblateAlphaArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Alpha values to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    values: Vec<f64>,
    #[arg(long, default_value = "runs/ablate-alpha")]
    out: PathBuf,
}

#[derive(Args)]
pub struct AblateSelectionArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Criteria to compare (loss_only, uncertainty_then_loss).
    #[arg(long, value_delimiter = ',', default_value = "loss_only,uncertainty_then_loss")]
    criteria: Vec<String>,
    #[arg(long, default_value = "runs/ablate-selection")]
    out: PathBuf,
}

#[derive(Args)]
pub struct AblateNoise100Args {
    #[command(flatten)]
    opts: TrainOpts,
    /// Morphological iteration counts to test at 100% corruption.
    #[arg(long, value_delimiter = ',', default_value = "5,20")]
    levels: Vec<u32>,
    #[arg(long, default_value = "runs/ablate-noise100")]
    out: PathBuf,
}

fn mean_dice_of(artifacts: &[RunArtifacts]) -> f64 {
    artifacts.iter().map(|a| a.row.dice).sum::<f64>() / artifacts.len() as f64
}

fn mean_curve(artifacts: &[RunArtifacts]) -> Vec<f64> {
    let epochs = artifacts[0].history.len();
    (0..epochs)
        .map(|e| {
            artifacts.iter().map(|a| a.history[e].test_dice).sum::<f64>() / artifacts.len() as f64
        })
        .collect()
}

fn finish_ablation(
    rows: Vec<ResultRow>,
    out: &Path,
) -> anyhow::Result<()> {
    let csv = emit_table(&rows, TableFormat::Csv)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("results.csv"), &csv)?;
    std::fs::write(out.join("results.md"), emit_table(&rows, TableFormat::Markdown)?)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(cmd: AblateCmd) -> anyhow::Result<()> {
    match cmd {
        AblateCmd::Alpha(args) => {
            let base = args.opts.resolve()?;
            if base.train.strategy != Strategy::SsJo {
                bail!(noisyseg::Error::InvalidConfig(
                    "alpha ablation requires strategy ss_jo".into()
                ));
            }
            let mut rows = Vec::new();
            let mut bars = Vec::new();
            for &alpha in &args.values {
                let mut spec = base.clone();
                spec.train.correction.alpha = alpha;
                spec.validate()?;
                let artifacts = run_experiment(&spec, &args.out, &args.opts.run_options())?;
                bars.push((format!("{alpha}"), mean_dice_of(&artifacts)));
                rows.extend(artifacts.iter().map(|a| a.row.clone()));
            }
            std::fs::create_dir_all(&args.out)?;
            plot_bars(&bars, "Mean test Dice by alpha", "dice", &args.out.join("alpha_sweep.svg"))?;
            finish_ablation(rows, &args.out)
        }
        AblateCmd::Selection(args) => {
            let base = args.opts.resolve()?;
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for criterion in &args.criteria {
                let mut spec = base.clone();
                spec.train.strategy = match criterion.as_str() {
                    "loss_only" => Strategy::CoteachSmallLoss,
                    "uncertainty_then_loss" => Strategy::Ss,
                    other => bail!(noisyseg::Error::InvalidConfig(format!(
                        "unknown selection criterion {other:?}"
                    ))),
                };
                spec.validate()?;
                let artifacts = run_experiment(&spec, &args.out, &args.opts.run_options())?;
                curves.push((criterion.clone(), mean_curve(&artifacts)));
                rows.extend(artifacts.iter().map(|a| a.row.clone()));
            }
            std::fs::create_dir_all(&args.out)?;
            plot_curves(
                &curves,
                "Test Dice by selection criterion",
                "epoch",
                "dice",
                &args.out.join("selection_criteria.svg"),
            )?;
            finish_ablation(rows, &args.out)
        }
        AblateCmd::Noise100(args) => {
            let base = args.opts.resolve()?;
            let mut rows = Vec::new();
            let mut bars = Vec::new();
            for &level in &args.levels {
                for strategy in [Strategy::Vanilla, Strategy::Ss] {
                    let mut spec = base.clone();
                    spec.train.strategy = strategy;
                    spec.noise.ratio = 1.0;
                    spec.noise.iter_min = level;
                    spec.noise.iter_max = level;
                    spec.validate()?;
                    let artifacts = run_experiment(&spec, &args.out, &args.opts.run_options())?;
                    bars.push((format!("{strategy} n={level}"), mean_dice_of(&artifacts)));
                    rows.extend(artifacts.iter().map(|a| a.row.clone()));
                }
            }
            std::fs::create_dir_all(&args.out)?;
            plot_bars(
                &bars,
                "Mean test Dice at 100% noise",
                "dice",
                &args.out.join("noise100.svg"),
            )?;
            finish_ablation(rows, &args.out)
        }
    }
}

// -------------------------------------------------------------------- report

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories to merge.
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(args: ReportArgs) -> anyhow::Result<()> {
    let (rows, errors) = merge_run_reports(&args.run_dirs);
    for (dir, err) in &errors {
        eprintln!("run {}: {err}", dir.display());
    }
    if rows.is_empty() {
        bail!(noisyseg::Error::EmptyDataset("no readable run directories".into()));
    }
    let table = emit_table(&rows, args.format.into())?;
    match &args.out {
        Some(path) => std::fs::write(path, &table)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{table}"),
    }
    if !errors.is_empty() {
        bail!(noisyseg::Error::EmptyDataset(format!(
            "{} run directory(ies) could not be read",
            errors.len()
        )));
    }
    Ok(())
}

