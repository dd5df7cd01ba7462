//! Regresses each channel from another with a small U-Net and reports the
//! held-out R² per pair; stain channels should predict each other worse than
//! RGB channels do.
//!
//! ```text
//! cargo run --release --example view_independence -- --tiles 600 --out views
//! ```

use std::path::PathBuf;

use clap::Parser;
use stainco::dataio::synth::{generate_synthetic_dataset, SynthConfig};
use stainco::dataio::Split;
use stainco::training::presets::DESK_TILE;
use stainco::viewanalysis::{independence_report, standard_pairs, ChannelRegressionTask, RegressionSettings};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 600)]
    tiles: usize,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes regression.csv, regression.txt and regression.svg here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> stainco::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let dataset = generate_synthetic_dataset(&SynthConfig::new(args.tiles, DESK_TILE, 7))?;
    let settings = RegressionSettings {
        epochs: args.epochs,
        seed: args.seed,
        ..RegressionSettings::default()
    };
    let tasks = standard_pairs()
        .into_iter()
        .map(|(i, t)| ChannelRegressionTask::new(i, t, settings.clone()))
        .collect::<stainco::Result<Vec<_>>>()?;
    let train = dataset.subset(Split::Train).tiles;
    let val = dataset.subset(Split::Val).tiles;
    let report = independence_report(&tasks, &train, &val)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        for path in report.write(out)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}
