//! Experiment execution: dataset preparation, run directories, reports.
//!
//! A run directory is self-contained: `config.json` re-executes the run
//! bit-identically, `history.jsonl` holds one epoch record per line,
//! `report.json` the final result row, `corruption_log.jsonl` what the
//! noise pass did, and `checkpoints/` the weights.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_split, synth_shapes, DataSource, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::metrics::{label_accuracy_report, ResultRow};
use crate::model::save_checkpoint;
use crate::morphology::{corrupt_dataset, CorruptionLog, NoiseSpec};
use crate::trainer::{corrected_labels_final, run_observed, EpochMetrics, Strategy, TrainConfig, TrainOutcome};

/// Where the samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Generated ellipse-blob data.
    Synthetic {
        train_count: usize,
        test_count: usize,
        size: usize,
        seed: u64,
    },
    /// Paired PNG directory with a manifest (defaults to
    /// `<root>/manifest.json`).
    Directory {
        root: PathBuf,
        manifest: Option<PathBuf>,
    },
}

impl DatasetSpec {
    /// Loads or generates the train/test partitions.
    pub fn materialize(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        match self {
            DatasetSpec::Synthetic {
                train_count,
                test_count,
                size,
                seed,
            } => {
                let all = synth_shapes(train_count + test_count, *size, *seed)?;
                let mut train = all;
                let test = train.split_off(*train_count);
                Ok((train, test))
            }
            DatasetSpec::Directory { root, manifest } => {
                let manifest_path = manifest
                    .clone()
                    .unwrap_or_else(|| root.join("manifest.json"));
                let manifest = DatasetManifest::load(&manifest_path)?;
                load_split(root, &manifest)
            }
        }
    }

    pub fn source(&self) -> DataSource {
        match self {
            DatasetSpec::Synthetic { .. } => DataSource::Synthetic,
            DatasetSpec::Directory { .. } => DataSource::Shenzhen,
        }
    }
}

/// Everything needed to reproduce a set of runs: dataset, corruption,
/// training schedule, and the seeds to sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one seed".into()));
        }
        Ok(())
    }

    /// The single-seed spec executed for `seed`: both the corruption and
    /// the training stream derive from it.
    pub fn resolved(&self, seed: u64) -> ExperimentSpec {
        let mut spec = self.clone();
        spec.noise.seed = seed;
        spec.train.seed = seed;
        spec.seeds = vec![seed];
        spec
    }
}

/// Hex SHA-256 of the spec with its seeds canonicalized to zero; pairs with
/// the seed to identify a run.
pub fn config_hash(spec: &ExperimentSpec) -> String {
    let mut canon = spec.clone();
    canon.noise.seed = 0;
    canon.train.seed = 0;
    canon.seeds = Vec::new();
    let json = serde_json::to_string(&canon).expect("spec serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// `config.json` contents of one run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub seed: u64,
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Save weights every N epochs (final weights are always saved).
    pub checkpoint_every: Option<usize>,
    /// Print an epoch progress line to stderr.
    pub verbose: bool,
}

/// Outcome summary of one executed run.
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub row: ResultRow,
    pub history: Vec<EpochMetrics>,
    pub corruption: CorruptionLog,
}

fn run_name(spec: &ExperimentSpec, seed: u64) -> String {
    let k = match spec.train.strategy {
        Strategy::SsJo => format!("-k{}", spec.train.correction.jo_start_epoch),
        _ => String::new(),
    };
    format!(
        "{}-r{:02}{}-seed{}",
        spec.train.strategy,
        (spec.noise.ratio * 100.0).round() as u32,
        k,
        seed
    )
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Applies the corruption pass to the training masks, leaving clean masks
/// untouched.
pub fn corrupt_train_masks(train: &mut [Sample], noise: &NoiseSpec) -> Result<CorruptionLog> {
    if noise.ratio == 0.0 {
        return Ok(CorruptionLog::default());
    }
    let masks: Vec<_> = train.iter().map(|s| s.train_mask.clone()).collect();
    let (corrupted, log) = corrupt_dataset(&masks, noise)?;
    for (sample, mask) in train.iter_mut().zip(corrupted) {
        sample.train_mask = mask;
    }
    Ok(log)
}

/// Executes one seed of an experiment into `<out_root>/<run-name>/`.
pub fn execute_run(
    spec: &ExperimentSpec,
    seed: u64,
    out_root: &Path,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    spec.validate()?;
    let resolved = spec.resolved(seed);
    let dir = out_root.join(run_name(&resolved, seed));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let record = RunRecord {
        spec: resolved.clone(),
        config_hash: config_hash(spec),
        seed,
    };
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&record)?)
        .map_err(|e| Error::io(&config_path, e))?;

    let (mut train, test) = resolved.dataset.materialize()?;
    let corruption = corrupt_train_masks(&mut train, &resolved.noise)?;
    write_jsonl(&dir.join("corruption_log.jsonl"), &corruption.entries)?;

    let started = Instant::now();
    let mut history_file = String::new();
    let checkpoints = dir.join("checkpoints");
    let outcome: TrainOutcome = run_observed(&resolved.train, &train, &test, &mut |committee, m| {
        history_file.push_str(&serde_json::to_string(m)?);
        history_file.push('\n');
        if opts.verbose {
            eprintln!(
                "[{}] epoch {:>3}/{} lr {:.6} loss {:.4} test dice {:.4}{}",
                run_name(&resolved, seed),
                m.epoch + 1,
                resolved.train.epochs,
                m.lr,
                m.train_loss.first().copied().unwrap_or(f64::NAN),
                m.test_dice,
                if m.jo_active { " [jo]" } else { "" }
            );
        }
        if let Some(every) = opts.checkpoint_every {
            if every > 0 && (m.epoch + 1) % every == 0 {
                save_checkpoint(committee, m.epoch, &checkpoints.join(format!("epoch_{:04}", m.epoch)))?;
            }
        }
        Ok(())
    })?;
    let runtime_s = started.elapsed().as_secs_f64();

    let history_path = dir.join("history.jsonl");
    std::fs::write(&history_path, history_file).map_err(|e| Error::io(&history_path, e))?;
    save_checkpoint(&outcome.committee, resolved.train.epochs - 1, &checkpoints.join("final"))?;

    // end-of-training label quality for strategies that correct labels
    if resolved.train.strategy == Strategy::SsJo {
        let corrected = corrected_labels_final(&outcome.committee, &train, &resolved.train.correction)?;
        let noisy: Vec<_> = train.iter().map(|s| s.train_mask.clone()).collect();
        let clean: Vec<_> = train.iter().map(|s| s.clean_mask.clone()).collect();
        let report = label_accuracy_report(&corrected, &noisy, &clean)?;
        let path = dir.join("label_accuracy.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .map_err(|e| Error::io(&path, e))?;
    }

    let final_dice = outcome
        .history
        .last()
        .map(|m| m.test_dice)
        .ok_or_else(|| Error::EmptyDataset("run produced no epochs".into()))?;
    let row = ResultRow {
        noise_ratio: resolved.noise.ratio,
        noise_level: (resolved.noise.ratio > 0.0)
            .then_some((resolved.noise.iter_min, resolved.noise.iter_max)),
        strategy: resolved.train.strategy.to_string(),
        k: (resolved.train.strategy == Strategy::SsJo)
            .then_some(resolved.train.correction.jo_start_epoch as u32),
        dice: final_dice,
        seed,
        runtime_s,
    };
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&row)?)
        .map_err(|e| Error::io(&report_path, e))?;

    Ok(RunArtifacts {
        dir,
        row,
        history: outcome.history,
        corruption,
    })
}

/// Executes every seed of the experiment; returns one row per run.
pub fn run_experiment(spec: &ExperimentSpec, out_root: &Path, opts: &RunOptions) -> Result<Vec<RunArtifacts>> {
    spec.validate()?;
    spec.seeds
        .iter()
        .map(|&seed| execute_run(spec, seed, out_root, opts))
        .collect()
}

/// Reads the rows of previously executed run directories, deduplicating by
/// (config hash, seed). Returns the merged rows plus per-directory errors
/// for runs that could not be read.
pub fn merge_run_reports(run_dirs: &[PathBuf]) -> (Vec<ResultRow>, Vec<(PathBuf, Error)>) {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for dir in run_dirs {
        let read = || -> Result<(RunRecord, ResultRow)> {
            let config_path = dir.join("config.json");
            let record: RunRecord = serde_json::from_str(
                &std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?,
            )?;
            let history_path = dir.join("history.jsonl");
            if !history_path.exists() {
                return Err(Error::BadArtifact {
                    path: history_path,
                    reason: "missing history.jsonl".into(),
                });
            }
            let report_path = dir.join("report.json");
            let row: ResultRow = serde_json::from_str(
                &std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?,
            )?;
            Ok((record, row))
        };
        match read() {
            Ok((record, row)) => {
                if seen.insert((record.config_hash.clone(), record.seed)) {
                    rows.push(row);
                }
            }
            Err(e) => errors.push((dir.clone(), e)),
        }
    }
    (rows, errors)
}

/// Loads the epoch history of a run directory.
pub fn load_history(dir: &Path) -> Result<Vec<EpochMetrics>> {
    read_jsonl(&dir.join("history.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_spec() -> ExperimentSpec {
        let model = ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 2,
            base_channels: 2,
            input_hw: (32, 32),
        };
        let mut train = TrainConfig::new(model, Strategy::Ss);
        train.epochs = 1;
        train.batch_size = 4;
        train.augment = crate::data::AugmentConfig::none();
        ExperimentSpec {
            dataset: DatasetSpec::Synthetic {
                train_count: 8,
                test_count: 4,
                size: 32,
                seed: 3,
            },
            noise: NoiseSpec::new(0.5, 1, 2, crate::morphology::OpMode::RandomChoice, 0).unwrap(),
            train,
            seeds: vec![1],
        }
    }

    #[test]
    fn config_hash_ignores_seeds_only() {
        let spec = tiny_spec();
        let h1 = config_hash(&spec);
        let h2 = config_hash(&spec.resolved(99));
        assert_eq!(h1, h2);
        let mut other = spec.clone();
        other.train.epochs = 2;
        assert_ne!(h1, config_hash(&other));
    }

    #[test]
    fn execute_run_writes_complete_run_dir() {
        let out = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let artifacts = execute_run(&spec, 1, out.path(), &RunOptions::default()).unwrap();
        assert!(artifacts.dir.join("config.json").exists());
        assert!(artifacts.dir.join("history.jsonl").exists());
        assert!(artifacts.dir.join("report.json").exists());
        assert!(artifacts.dir.join("corruption_log.jsonl").exists());
        assert!(artifacts.dir.join("checkpoints/final/manifest.json").exists());
        assert_eq!(artifacts.history.len(), 1);
        assert_eq!(artifacts.corruption.len(), 4); // round(0.5 * 8)
        let history = load_history(&artifacts.dir).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(history[0], artifacts.history[0]);
    }

    #[test]
    fn merge_dedups_and_reports_missing() {
        let out = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let a = execute_run(&spec, 1, out.path(), &RunOptions::default()).unwrap();
        let (rows, errors) = merge_run_reports(&[a.dir.clone(), a.dir.clone()]);
        assert_eq!(rows.len(), 1);
        assert!(errors.is_empty());

        std::fs::remove_file(a.dir.join("history.jsonl")).unwrap();
        let (rows, errors) = merge_run_reports(&[a.dir.clone()]);
        assert!(rows.is_empty());
        assert_eq!(errors.len(), 1);
    }
}
