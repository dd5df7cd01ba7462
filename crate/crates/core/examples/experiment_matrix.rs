//! Trains the desk-scale counterparts of the main comparison on a synthetic
//! corpus and prints the comparison table.
//!
//! ```text
//! cargo run --release --example experiment_matrix -- --out runs_desk --seeds 0,1,2
//! ```

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use stainco::dataio::synth::{generate_synthetic_dataset, SynthConfig, DEFAULT_NUISANCE};
use stainco::model::VariantKind;
use stainco::training::presets::{desk_config, DESK_TILE, DESK_TILES};
use stainco::training::report::render_markdown;
use stainco::training::{run_replicates, ReplicateOptions};

#[derive(Parser)]
struct Args {
    /// Run directory root; runs are kept in memory when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = DESK_TILES)]
    tiles: usize,
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    /// Class-free variation of the corpus, in [0, 1].
    #[arg(long, default_value_t = DEFAULT_NUISANCE)]
    nuisance: f64,
}

fn main() -> stainco::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut synth = SynthConfig::new(args.tiles, DESK_TILE, args.data_seed);
    synth.nuisance = args.nuisance;
    let dataset = generate_synthetic_dataset(&synth)?;
    let rows = [
        (VariantKind::RgbBaseline, 1.0),
        (VariantKind::RgbBaseline, 0.1),
        (VariantKind::DualHeCotrain, 0.1),
    ];
    let mut summaries = Vec::new();
    for (variant, p) in rows {
        let mut config = desk_config(variant, p, "synthetic");
        config.seeds = args.seeds.clone();
        config.epochs = args.epochs;
        if let Some(lr) = args.lr {
            config.initial_lr = lr;
        }
        let t = Instant::now();
        let options = ReplicateOptions { out_root: args.out.clone(), jobs: 1, force: false };
        let summary = run_replicates(&config, &dataset, &options)?;
        println!("{:<20} {}  ({:.0}s)", config.name, summary.mean_std_line(), t.elapsed().as_secs_f64());
        summaries.push(summary);
    }
    println!("\n{}", render_markdown(&summaries));
    Ok(())
}
