//! Ready-made experiment configs.
//!
//! `desk` configs are sized for a CPU in minutes: a narrow residual network,
//! 24 px synthetic tiles cropped to 20 px, 30 epochs. `full` configs use the
//! 18-layer network on full-size tiles with the original epoch counts and
//! learning rates.

use std::path::PathBuf;

use crate::channel::Channel;
use crate::dataio::augment::AugmentationPolicy;
use crate::model::resnet::Architecture;
use crate::model::variant::VariantKind;
use crate::objective::DEFAULT_MARGIN;
use crate::training::config::{ExperimentConfig, LambdaSetting, LrSchedule};

pub const DESK_TILE: usize = 24;
pub const DESK_CROP: usize = 20;
pub const DESK_EPOCHS: usize = 30;
pub const DESK_TILES: usize = 2000;

/// File stem such as `he_cotrain_p10` or `rb_resnet_p100`.
pub fn config_stem(variant: &VariantKind, label_fraction: f64, supervised_only: bool) -> String {
    let pct = (label_fraction * 100.0).round() as u32;
    let pair = |c: &[Channel; 2]| format!("{}{}", c[0], c[1]).to_lowercase();
    let base = match variant {
        VariantKind::DualHeCotrain if supervised_only => "he_nocontrast".to_string(),
        VariantKind::DualHeCotrain => "he_cotrain".to_string(),
        VariantKind::RgbBaseline => "rgb_baseline".to_string(),
        VariantKind::HOnly => "h_resnet".to_string(),
        VariantKind::EOnly => "e_resnet".to_string(),
        VariantKind::TwoChannelBaseline { channels } => format!("{}_resnet", pair(channels)),
        VariantKind::DualChannelPairCotrain { channels } => format!("{}_cotrain", pair(channels)),
    };
    format!("{base}_p{pct}")
}

fn n_groups_for(label_fraction: f64) -> usize {
    (1.0 / label_fraction).round() as usize
}

/// CPU-sized config on a synthetic corpus.
pub fn desk_config(variant: VariantKind, label_fraction: f64, manifest: impl Into<PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        name: config_stem(&variant, label_fraction, false),
        variant,
        architecture: Architecture::ResnetTiny { width: 8 },
        pretrained: None,
        label_fraction,
        n_groups: n_groups_for(label_fraction),
        batch_size: 64,
        labeled_per_batch: None,
        epochs: DESK_EPOCHS,
        initial_lr: 1e-3,
        lr_schedule: LrSchedule::default(),
        weight_decay: 0.0,
        margin: DEFAULT_MARGIN,
        lambda: LambdaSetting::default(),
        supervised_only: false,
        seeds: vec![0, 1, 2],
        augmentation: AugmentationPolicy::new(DESK_CROP, 0.1),
        manifest: manifest.into(),
        eval_batch_size: 256,
        max_steps: None,
    }
}

/// Full-size config: 18-layer network, 250 epochs (100 for the prostate
/// set), lr 1e-3 at full labels and 1e-4 otherwise, five seeds.
pub fn full_config(
    variant: VariantKind,
    label_fraction: f64,
    manifest: impl Into<PathBuf>,
    epochs: usize,
    crop: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        name: config_stem(&variant, label_fraction, false),
        variant,
        architecture: Architecture::Resnet18,
        pretrained: None,
        label_fraction,
        n_groups: n_groups_for(label_fraction),
        batch_size: 64,
        labeled_per_batch: None,
        epochs,
        initial_lr: if label_fraction >= 1.0 { 1e-3 } else { 1e-4 },
        lr_schedule: LrSchedule::default(),
        weight_decay: 0.0,
        margin: DEFAULT_MARGIN,
        lambda: LambdaSetting::default(),
        supervised_only: false,
        seeds: vec![0, 1, 2, 3, 4],
        augmentation: AugmentationPolicy::new(crop, 0.1),
        manifest: manifest.into(),
        eval_batch_size: 256,
        max_steps: None,
    }
}

/// The contrastive-free ablation of a two-branch config: same batches, λ = 0.
pub fn without_contrast(mut config: ExperimentConfig) -> ExperimentConfig {
    config.lambda = LambdaSetting::Fixed(0.0);
    config.name = config_stem(&config.variant, config.label_fraction, true);
    config
}
