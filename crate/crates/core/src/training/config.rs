//! Experiment configuration, its canonical serialization and hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::augment::AugmentationPolicy;
use crate::dataio::batch::default_labeled_per_batch;
use crate::dataio::manifest::resolve_locator;
use crate::error::{Error, Result};
use crate::model::resnet::{Architecture, EncoderSpec};
use crate::model::variant::VariantKind;
use crate::objective::{lambda_from_label_fraction, DEFAULT_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `initial × factor^⌊epoch / (every · epochs)⌋`.
    Step { factor: f64, every: f64 },
    /// Half-cosine from `initial` towards zero.
    Cosine,
    Constant,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Step { factor: 0.1, every: 0.4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// `"auto"` (0.2·p) or an explicit weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Auto(AutoTag),
    Fixed(f64),
}

impl Default for LambdaSetting {
    fn default() -> Self {
        LambdaSetting::Auto(AutoTag::Auto)
    }
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_eval_batch() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: VariantKind,
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    pub label_fraction: f64,
    pub n_groups: usize,
    pub batch_size: usize,
    /// Labeled samples per mixed batch; defaults to `round(p · batch_size)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_per_batch: Option<usize>,
    pub epochs: usize,
    pub initial_lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub lambda: LambdaSetting,
    /// Cross-entropy only, even for two-branch variants.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub supervised_only: bool,
    pub seeds: Vec<u64>,
    pub augmentation: AugmentationPolicy,
    pub manifest: PathBuf,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Stop after this many optimizer steps (diagnostics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.variant.validate()?;
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return fail(format!("label_fraction {} outside (0, 1]", self.label_fraction));
        }
        if self.n_groups == 0 {
            return fail("n_groups must be at least 1".into());
        }
        let implied = (1.0 / self.label_fraction).round() as usize;
        if implied != self.n_groups {
            return fail(format!(
                "label_fraction {} implies {implied} groups, config has {}",
                self.label_fraction, self.n_groups
            ));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size {} leaves no negative partner", self.batch_size));
        }
        if let Some(l) = self.labeled_per_batch {
            if l == 0 || l > self.batch_size {
                return fail(format!("labeled_per_batch {l} not in 1..={}", self.batch_size));
            }
        }
        if !(self.margin >= 0.0) {
            return fail(format!("margin {} must be non-negative", self.margin));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if let LambdaSetting::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return fail(format!("lambda {l} must be non-negative"));
            }
        }
        match self.lr_schedule {
            LrSchedule::Step { factor, every } => {
                if !(factor > 0.0 && factor <= 1.0) || !(every > 0.0) {
                    return fail("step schedule needs factor in (0, 1] and every > 0".into());
                }
            }
            LrSchedule::Cosine | LrSchedule::Constant => {}
        }
        if self.augmentation.crop_size == 0 {
            return fail("crop_size must be positive".into());
        }
        if self.eval_batch_size == 0 {
            return fail("eval_batch_size must be positive".into());
        }
        self.encoder_spec().validate()
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        let mut spec = EncoderSpec::new(self.architecture, self.variant.in_channels());
        spec.pretrained = self.pretrained.clone();
        spec
    }

    pub fn lambda(&self) -> Result<f64> {
        match self.lambda {
            LambdaSetting::Auto(_) => lambda_from_label_fraction(self.label_fraction),
            LambdaSetting::Fixed(l) => Ok(l),
        }
    }

    /// Whether the triplet term is part of the objective.
    pub fn uses_contrastive(&self) -> bool {
        self.variant.is_cotrain() && !self.supervised_only
    }

    /// Labeled samples per batch. Purely supervised runs use all-labeled batches.
    pub fn labeled_per_batch(&self) -> usize {
        if !self.uses_contrastive() {
            return self.batch_size;
        }
        self.labeled_per_batch
            .unwrap_or_else(|| default_labeled_per_batch(self.label_fraction, self.batch_size))
    }

    /// Manifest path: absolute, or relative to the data root (or the working directory).
    pub fn manifest_path(&self) -> PathBuf {
        resolve_locator(&self.manifest.to_string_lossy(), Path::new("."))
    }

    /// Sorted-key JSON of everything except the seed list.
    pub fn canonical_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("seeds");
        }
        Ok(serde_json::to_string(&value)?)
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }
}

/// Learning rate of `epoch` (0-based) in a run of `epochs`.
pub fn lr_at(initial_lr: f64, epoch: usize, epochs: usize, schedule: &LrSchedule) -> f64 {
    match *schedule {
        LrSchedule::Step { factor, every } => {
            let period = every * epochs as f64;
            // The epsilon keeps exact boundaries (e.g. 100 / (0.4·250)) on the right side.
            let k = (epoch as f64 / period + 1e-9).floor();
            initial_lr * factor.powi(k as i32)
        }
        LrSchedule::Cosine => {
            initial_lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
        }
        LrSchedule::Constant => initial_lr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_boundaries() {
        let s = LrSchedule::default();
        assert_eq!(lr_at(1.0, 0, 250, &s), 1.0);
        assert_eq!(lr_at(1.0, 99, 250, &s), 1.0);
        assert!((lr_at(1.0, 100, 250, &s) - 0.1).abs() < 1e-15);
        assert!((lr_at(1.0, 200, 250, &s) - 0.01).abs() < 1e-15);
        assert!((lr_at(1.0, 12, 30, &s) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lambda_setting_parses_both_forms() {
        let a: LambdaSetting = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(a, LambdaSetting::default());
        let b: LambdaSetting = serde_json::from_str("0.5").unwrap();
        assert_eq!(b, LambdaSetting::Fixed(0.5));
        assert!(serde_json::from_str::<LambdaSetting>("\"sometimes\"").is_err());
    }
}
