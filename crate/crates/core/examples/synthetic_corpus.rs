//! Generates the synthetic two-stain corpus and prints how it is split.
//!
//! ```text
//! cargo run --release --example synthetic_corpus -- --n 2000 --out data/synth
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Parser;
use stainco::dataio::synth::{generate_synthetic_dataset, write_dataset, SynthConfig};
use stainco::dataio::split::{records_in, select_labeled_subset};
use stainco::dataio::Split;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 24)]
    tile_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write tiles and manifest here; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> stainco::Result<()> {
    let args = Args::parse();
    let dataset = generate_synthetic_dataset(&SynthConfig::new(args.n, args.tile_size, args.seed))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let records = records_in(&dataset.records, split);
        let groups: BTreeSet<u32> = records.iter().map(|r| r.group_id).collect();
        let diffuse = records.iter().filter(|r| r.label == Some(1)).count();
        println!(
            "{split:>5}: {:4} tiles in {:3} polygons, {:4} diffuse",
            records.len(),
            groups.len(),
            diffuse
        );
    }

    // One of ten group buckets keeps its labels.
    let train = records_in(&dataset.records, Split::Train);
    let subset = select_labeled_subset(&train, 10, 0)?;
    subset.check_group_leakage()?;
    println!("labeled fraction with 10 groups: {:.3}", subset.labeled_fraction());

    if let Some(out) = &args.out {
        let manifest = write_dataset(&dataset, out)?;
        println!("{}", manifest.display());
    }
    Ok(())
}
