//! Separates a rendered H&E tile into hematoxylin and eosin planes and writes
//! them in the `.stain` container.
//!
//! ```text
//! cargo run --example stain_separation -- --out /tmp/tile.stain
//! ```

use std::path::PathBuf;

use clap::Parser;
use stainco::dataio::synth::render_tile;
use stainco::stain::{rgb_to_he_raw, rgb_to_stain_pair, StainMatrix};
use stainco::{Plane, RgbTile, StainPair};

#[derive(Parser)]
struct Args {
    /// 0 for a nested tile, 1 for a diffuse one.
    #[arg(long, default_value_t = 0)]
    class: u8,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the stain pair.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn describe(name: &str, p: &Plane) {
    let (lo, hi) = p.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("{name}: mean {:.4}, range [{lo:.4}, {hi:.4}]", p.mean());
}

fn main() -> stainco::Result<()> {
    let args = Args::parse();

    // A white pixel carries no stain.
    let white = RgbTile::uniform(1, 1, [255, 255, 255]);
    let raw = rgb_to_he_raw(&white, &StainMatrix::default());
    println!("white pixel raw (H, E) = ({}, {})", raw.hematoxylin[0], raw.eosin[0]);

    let tile = render_tile(args.class, args.size, args.seed);
    let pair = rgb_to_stain_pair(&tile);
    describe("hematoxylin", pair.h());
    describe("eosin", pair.e());

    if let Some(out) = &args.out {
        let mut bytes = Vec::new();
        pair.write_to(&mut bytes).map_err(|e| stainco::Error::io(out, e))?;
        std::fs::write(out, &bytes).map_err(|e| stainco::Error::io(out, e))?;
        let back = StainPair::read_from(bytes.as_slice())?;
        assert_eq!(back, pair);
        println!("wrote {} ({} bytes)", out.display(), bytes.len());
    }
    Ok(())
}
