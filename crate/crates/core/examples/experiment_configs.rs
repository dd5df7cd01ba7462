//! Writes the shipped experiment configs: desk-scale ones for the synthetic
//! corpus into `configs/`, full-size ones into `configs/full/<dataset>/`.
//!
//! ```text
//! cargo run --example experiment_configs -- --out configs
//! ```

use std::path::PathBuf;

use clap::Parser;
use stainco::channel::Channel;
use stainco::model::VariantKind;
use stainco::training::presets::{desk_config, full_config, without_contrast};
use stainco::training::store::pretty_canonical;
use stainco::training::ExperimentConfig;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "configs")]
    out: PathBuf,
}

/// Every in-scope row: `(variant, label fraction, without contrast)`.
fn rows(low: f64) -> Vec<(VariantKind, f64, bool)> {
    use Channel::*;
    let mut rows = vec![
        (VariantKind::RgbBaseline, 1.0, false),
        (VariantKind::DualHeCotrain, 1.0, false),
        (VariantKind::RgbBaseline, low, false),
        (VariantKind::DualHeCotrain, low, false),
    ];
    if low < 0.1 {
        return rows;
    }
    for p in [1.0, low] {
        rows.push((VariantKind::HOnly, p, false));
        rows.push((VariantKind::EOnly, p, false));
        rows.push((VariantKind::DualHeCotrain, p, true));
    }
    for channels in [[R, B], [R, G], [G, B]] {
        rows.push((VariantKind::TwoChannelBaseline { channels }, low, false));
        rows.push((VariantKind::DualChannelPairCotrain { channels }, low, false));
    }
    rows
}

fn finish(config: ExperimentConfig, no_contrast: bool) -> ExperimentConfig {
    if no_contrast {
        without_contrast(config)
    } else {
        config
    }
}

fn main() -> stainco::Result<()> {
    let args = Args::parse();
    let mut sets: Vec<(PathBuf, ExperimentConfig)> = Vec::new();
    for (variant, p, nc) in rows(0.1) {
        let c = finish(desk_config(variant, p, "data/synth/manifest.csv"), nc);
        sets.push((args.out.clone(), c));
    }
    let full = args.out.join("full");
    for (variant, p, nc) in rows(0.1) {
        let c = finish(full_config(variant, p, "data/ccrcc/manifest.csv", 250, 256), nc);
        sets.push((full.join("ccrcc"), c));
    }
    for (variant, p, nc) in rows(0.05) {
        let c = finish(full_config(variant, p, "data/prostate/manifest.csv", 100, 224), nc);
        sets.push((full.join("prostate"), c));
    }
    for (dir, config) in sets {
        config.validate()?;
        std::fs::create_dir_all(&dir).map_err(|e| stainco::Error::io(&dir, e))?;
        let path = dir.join(format!("{}.json", config.name));
        std::fs::write(&path, pretty_canonical(&config)?).map_err(|e| stainco::Error::io(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}
