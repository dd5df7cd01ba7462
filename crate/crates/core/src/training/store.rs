//! Run directories, replicate runs and their summary.
//!
//! Layout: `<root>/<config_hash>/<seed>/{config.json, curves.csv, best.ckpt,
//! result.json}` plus `<root>/<config_hash>/summary.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::manifest::Split;
use crate::dataio::tiles::TileDataset;
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::training::config::ExperimentConfig;
use crate::training::run::{split_accuracy, train_prepared, PreparedViews, RunResult, TrainedRun};

pub const SUMMARY_FILE: &str = "summary.json";
pub const RESULT_FILE: &str = "result.json";

pub fn config_dir(root: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    Ok(root.join(config.hash()?))
}

pub fn run_dir(root: &Path, config: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    Ok(config_dir(root, config)?.join(seed.to_string()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn pretty_canonical(config: &ExperimentConfig) -> Result<String> {
    // serde_json maps are sorted, so a round trip through Value sorts keys.
    let value = serde_json::to_value(config)?;
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

pub fn write_curves(path: &Path, result: &RunResult) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,train_acc,val_acc,batch_order\n");
    for r in &result.curves {
        out.push_str(&format!(
            "{},{:e},{:.9},{:.6},{:.6},{}\n",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc, r.batch_order
        ));
    }
    write(path, out)
}

/// Writes every artifact of a finished run and returns its directory.
pub fn write_run(root: &Path, config: &ExperimentConfig, run: &TrainedRun) -> Result<PathBuf> {
    let dir = run_dir(root, config, run.result.seed)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.json"), pretty_canonical(config)?)?;
    write_curves(&dir.join("curves.csv"), &run.result)?;
    let meta = CheckpointMeta {
        variant: config.variant.clone(),
        encoder: config.encoder_spec(),
        standardization: run.standardization.clone(),
        input_size: config.augmentation.crop_size,
        config_hash: run.result.config_hash.clone(),
        seed: run.result.seed,
        epoch: run.result.best_epoch,
    };
    save_checkpoint(&dir.join("best.ckpt"), &run.model, &meta)?;
    write(&dir.join(RESULT_FILE), serde_json::to_string_pretty(&run.result)? + "\n")?;
    Ok(dir)
}

pub fn read_result(dir: &Path) -> Result<RunResult> {
    let path = dir.join(RESULT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub variant: String,
    pub config_hash: String,
    pub dataset: String,
    pub label_fraction: f64,
    /// Sample mean over successful seeds.
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single seed.
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub partial: bool,
    pub single_seed: bool,
    pub seeds: Vec<SeedOutcome>,
}

impl Summary {
    /// `84.8 ± 2.4%`, with a marker when only one seed contributed.
    pub fn mean_std_line(&self) -> String {
        if self.n_ok == 0 {
            return format!("failed ({} of {} seeds)", self.n_failed, self.seeds.len());
        }
        let mut s = format!("{:.1} ± {:.1}%", 100.0 * self.mean, 100.0 * self.std);
        if self.single_seed {
            s.push_str(" (single seed)");
        }
        if self.partial {
            s.push_str(&format!(" ({} failed)", self.n_failed));
        }
        s
    }
}

/// Sample mean and sample standard deviation; the std of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn summarize(config: &ExperimentConfig, outcomes: Vec<SeedOutcome>) -> Result<Summary> {
    let accs: Vec<f64> = outcomes.iter().filter_map(|o| o.test_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let n_failed = outcomes.iter().filter(|o| !o.ok).count();
    Ok(Summary {
        name: config.name.clone(),
        variant: config.variant.label(),
        config_hash: config.hash()?,
        dataset: config.manifest.display().to_string(),
        label_fraction: config.label_fraction,
        mean,
        std,
        n_ok: accs.len(),
        n_failed,
        partial: n_failed > 0,
        single_seed: accs.len() == 1,
        seeds: outcomes,
    })
}

#[derive(Clone, Debug, Default)]
pub struct ReplicateOptions {
    /// Where run directories go; nothing is written when `None`.
    pub out_root: Option<PathBuf>,
    /// Parallel replicates (at least 1).
    pub jobs: usize,
    /// Retrain seeds whose `result.json` already exists.
    pub force: bool,
}

fn outcome_of(result: &RunResult) -> SeedOutcome {
    SeedOutcome {
        seed: result.seed,
        ok: true,
        test_accuracy: Some(result.test_accuracy),
        best_epoch: Some(result.best_epoch),
        error: None,
    }
}

fn reuse_existing(root: &Path, config: &ExperimentConfig, seed: u64) -> Result<Option<RunResult>> {
    let dir = run_dir(root, config, seed)?;
    if !dir.join(RESULT_FILE).exists() {
        return Ok(None);
    }
    let stored = std::fs::read_to_string(dir.join("config.json")).map_err(|e| Error::io(&dir, e))?;
    let stored: ExperimentConfig = serde_json::from_str(&stored)?;
    if stored.hash()? != config.hash()? {
        return Ok(None);
    }
    read_result(&dir).map(Some)
}

/// Runs every seed of `config`; failed seeds are recorded, not propagated.
pub fn run_replicates(config: &ExperimentConfig, dataset: &TileDataset, options: &ReplicateOptions) -> Result<Summary> {
    config.validate()?;
    let views = PreparedViews::new(dataset, &config.variant)?;
    let one = |seed: u64| -> SeedOutcome {
        let attempt = || -> Result<RunResult> {
            if let (Some(root), false) = (&options.out_root, options.force) {
                if let Some(r) = reuse_existing(root, config, seed)? {
                    log::info!("{} seed {seed}: reusing finished run", config.name);
                    return Ok(r);
                }
            }
            let run = train_prepared(config, dataset, &views, seed)?;
            if let Some(root) = &options.out_root {
                write_run(root, config, &run)?;
            }
            log::info!(
                "{} seed {seed}: test accuracy {:.4} (best epoch {})",
                config.name,
                run.result.test_accuracy,
                run.result.best_epoch
            );
            Ok(run.result)
        };
        match attempt() {
            Ok(r) => outcome_of(&r),
            Err(e) => {
                log::error!("{} seed {seed} failed: {e}", config.name);
                SeedOutcome {
                    seed,
                    ok: false,
                    test_accuracy: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let outcomes: Vec<SeedOutcome> = if options.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| config.seeds.par_iter().map(|&s| one(s)).collect())
    } else {
        config.seeds.iter().map(|&s| one(s)).collect()
    };
    let summary = summarize(config, outcomes)?;
    if let Some(root) = &options.out_root {
        let dir = config_dir(root, config)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(summary)
}

/// Accuracy of a saved checkpoint on one split of `dataset`.
pub fn evaluate(checkpoint: &Path, dataset: &TileDataset, split: Split) -> Result<f64> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let indices = dataset.indices(split);
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!("split {split} is empty")));
    }
    if indices.iter().any(|&i| dataset.records[i].label.is_none()) {
        return Err(Error::InvalidInput(format!("split {split} has unlabeled tiles")));
    }
    let views = PreparedViews::new(dataset, &meta.variant)?;
    split_accuracy(&model, dataset, &views, &indices, meta.input_size, &meta.standardization, 256)
}
