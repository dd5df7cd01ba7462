//! Trains the H/E co-training model on a small synthetic corpus with 10% of
//! the labels, saves the run and evaluates the reloaded checkpoint.
//!
//! ```text
//! cargo run --release --example cotrain_quickstart -- --out runs_quick
//! ```

use std::path::PathBuf;

use clap::Parser;
use stainco::dataio::synth::{generate_synthetic_dataset, SynthConfig};
use stainco::dataio::Split;
use stainco::model::VariantKind;
use stainco::training::presets::{desk_config, DESK_TILE};
use stainco::training::store::write_run;
use stainco::training::{evaluate, train_one_run};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "runs_quick")]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    tiles: usize,
    #[arg(long, default_value_t = 6)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> stainco::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let dataset = generate_synthetic_dataset(&SynthConfig::new(args.tiles, DESK_TILE, 7))?;

    let mut config = desk_config(VariantKind::DualHeCotrain, 0.1, "synthetic");
    config.epochs = args.epochs;
    println!("{}: λ = {}, {} labeled per batch", config.name, config.lambda()?, config.labeled_per_batch());

    let run = train_one_run(&config, &dataset, args.seed)?;
    println!("epoch  lr        loss      train    val");
    for r in &run.result.curves {
        println!("{:5}  {:<8.1e}  {:8.4}  {:.3}    {:.3}", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc);
    }
    println!(
        "best epoch {} (val {:.3}), test accuracy {:.3}",
        run.result.best_epoch, run.result.best_val_accuracy, run.result.test_accuracy
    );

    let dir = write_run(&args.out, &config, &run)?;
    let reloaded = evaluate(&dir.join("best.ckpt"), &dataset, Split::Test)?;
    println!("reloaded checkpoint from {}: test accuracy {reloaded:.3}", dir.display());
    Ok(())
}
