//! The `stainco` command line.
//!
//! Exit codes: 0 on success, 1 when a command produced nothing (no runs
//! matched, every replicate failed), 2 on invalid input or any other error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::channel::Channel;
use crate::dataio::manifest::{Split, DATA_ROOT_ENV};
use crate::dataio::synth::{generate_synthetic_dataset, write_dataset, SynthConfig, DEFAULT_NUISANCE};
use crate::dataio::tiles::TileDataset;
use crate::error::{Error, Result};
use crate::stain::rgb_to_stain_pair;
use crate::training::report::{collect_summaries, render_markdown, write_report};
use crate::training::store::{evaluate, run_replicates, ReplicateOptions};
use crate::training::ExperimentConfig;
use crate::viewanalysis::{independence_report, standard_pairs, ChannelRegressionTask, RegressionSettings, UNetSpec};

/// Settings file written next to a generated corpus.
pub const SYNTH_SETTINGS_FILE: &str = "synth.json";

#[derive(Debug, Parser)]
#[command(name = "stainco", version, about = "Stain-separated co-training for H&E tile classification")]
#[command(after_help = format!("Relative tile locators are resolved against ${DATA_ROOT_ENV} when it is set."))]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and its tiles; optionally write stain pairs.
    Prepare(PrepareArgs),
    /// Generate a synthetic two-stain tile corpus.
    Synth(SynthArgs),
    /// Train every seed of one experiment config.
    Train(TrainArgs),
    /// Accuracy of a saved checkpoint on one split.
    Eval(EvalArgs),
    /// Channel-to-channel regression R² for the view-independence analysis.
    AnalyzeViews(AnalyzeArgs),
    /// Comparison table and accuracy plot over finished experiments.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Tile manifest (CSV).
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Write `<tile_id>.stain` files (H and E as float32) here.
    #[arg(long, requires = "out")]
    pub deconvolve: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing stain files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of tiles.
    #[arg(long = "n", default_value_t = 2000)]
    pub n_tiles: usize,
    /// Tile side in pixels.
    #[arg(long, default_value_t = 24)]
    pub tile_size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Strength of class-independent clutter in [0, 1].
    #[arg(long, default_value_t = DEFAULT_NUISANCE)]
    pub nuisance: f64,
    /// Output directory; receives `manifest.csv`, `tiles/` and `synth.json`.
    #[arg(long, default_value = "data/synth")]
    pub out: PathBuf,
    /// Regenerate even if the directory already holds a corpus.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the config's seed list, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Root of the run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Replicates trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Override the config's manifest path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Retrain seeds that already finished.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A `best.ckpt` written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Receives regression.csv, regression.txt and regression.svg.
    #[arg(long, default_value = "views")]
    pub out: PathBuf,
    /// Directed pairs such as `H:E,R:G`; the eight standard pairs by default.
    #[arg(long, value_delimiter = ',')]
    pub pairs: Option<Vec<String>>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Base width of the U-Net.
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Glob over config directories or their summary.json files.
    #[arg(long, default_value = "runs/*")]
    pub runs: String,
    /// Where report.md, report.csv and accuracy.svg go.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

/// What a command reports back besides errors.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Empty(String),
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    exit_code(run(cli))
}

pub fn exit_code(result: Result<Outcome>) -> ExitCode {
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Empty(why)) => {
            eprintln!("stainco: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("stainco: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Prepare(a) => prepare(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::AnalyzeViews(a) => analyze_views(&a),
        Command::Report(a) => report(&a),
    }
}

fn prepare(args: &PrepareArgs) -> Result<Outcome> {
    let dataset = TileDataset::load(&args.manifest)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let idx = dataset.indices(split);
        let labeled = idx.iter().filter(|&&i| dataset.records[i].label.is_some()).count();
        println!("{split}: {} tiles, {labeled} labeled", idx.len());
    }
    if !args.deconvolve {
        return Ok(Outcome::Done);
    }
    let out = args.out.as_deref().expect("clap requires --out with --deconvolve");
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = 0;
    for (record, tile) in dataset.records.iter().zip(&dataset.tiles) {
        let path = out.join(format!("{}.stain", record.tile_id));
        if path.exists() && !args.force {
            continue;
        }
        let mut bytes = Vec::new();
        rgb_to_stain_pair(tile).write_to(&mut bytes).map_err(|e| Error::io(&path, e))?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written += 1;
    }
    println!("wrote {written} stain files to {}", out.display());
    Ok(Outcome::Done)
}

fn synth(args: &SynthArgs) -> Result<Outcome> {
    let mut config = SynthConfig::new(args.n_tiles, args.tile_size, args.seed);
    config.nuisance = args.nuisance;
    let settings = args.out.join(SYNTH_SETTINGS_FILE);
    let manifest = args.out.join("manifest.csv");
    if settings.exists() && !args.force {
        let text = std::fs::read_to_string(&settings).map_err(|e| Error::io(&settings, e))?;
        let existing: SynthConfig = serde_json::from_str(&text)?;
        if existing != config {
            return Err(Error::InvalidInput(format!(
                "{} holds a corpus generated with different settings (seed {}, {} tiles); pass --force to replace it",
                args.out.display(),
                existing.seed,
                existing.n_tiles
            )));
        }
        println!("{}", manifest.display());
        return Ok(Outcome::Done);
    }
    let dataset = generate_synthetic_dataset(&config)?;
    let manifest = write_dataset(&dataset, &args.out)?;
    std::fs::write(&settings, serde_json::to_string_pretty(&config)? + "\n").map_err(|e| Error::io(&settings, e))?;
    println!("{}", manifest.display());
    Ok(Outcome::Done)
}

fn train(args: &TrainArgs) -> Result<Outcome> {
    if args.jobs == 0 {
        return Err(Error::InvalidInput("--jobs must be at least 1".into()));
    }
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(m) = &args.manifest {
        config.manifest = m.clone();
    }
    config.validate()?;
    let dataset = TileDataset::load(config.manifest_path())?;
    let options = ReplicateOptions {
        out_root: Some(args.out.clone()),
        jobs: args.jobs,
        force: args.force,
    };
    let summary = run_replicates(&config, &dataset, &options)?;
    println!("{}: {}", config.name, summary.mean_std_line());
    println!("{}", args.out.join(summary.config_hash.as_str()).join("summary.json").display());
    if summary.n_ok == 0 {
        return Ok(Outcome::Empty(format!("every seed of {} failed", config.name)));
    }
    if summary.partial {
        return Err(Error::Diverged(format!("{} of {} seeds failed", summary.n_failed, summary.seeds.len())));
    }
    Ok(Outcome::Done)
}

fn eval(args: &EvalArgs) -> Result<Outcome> {
    let dataset = TileDataset::load(&args.manifest)?;
    let acc = evaluate(&args.checkpoint, &dataset, args.split)?;
    println!("{} accuracy: {acc:.6}", args.split);
    Ok(Outcome::Done)
}

fn parse_pair(s: &str) -> Result<(Channel, Channel)> {
    let bad = || Error::InvalidInput(format!("pair {s:?} is not of the form H:E"));
    let (a, b) = s.split_once([':', '>']).ok_or_else(bad)?;
    Ok((a.parse()?, b.parse()?))
}

fn analyze_views(args: &AnalyzeArgs) -> Result<Outcome> {
    let settings = RegressionSettings {
        regressor: UNetSpec {
            width: args.width,
            ..UNetSpec::default()
        },
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    settings.validate()?;
    let pairs = match &args.pairs {
        Some(list) => list.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>>>()?,
        None => standard_pairs(),
    };
    let tasks = pairs
        .into_iter()
        .map(|(i, t)| ChannelRegressionTask::new(i, t, settings.clone()))
        .collect::<Result<Vec<_>>>()?;
    let dataset = TileDataset::load(&args.manifest)?;
    let train = dataset.subset(Split::Train).tiles;
    let val = dataset.subset(Split::Val).tiles;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("view analysis needs train and val tiles".into()));
    }
    let report = independence_report(&tasks, &train, &val)?;
    print!("{}", report.to_table());
    for path in report.write(&args.out)? {
        println!("{}", path.display());
    }
    if report.entries.is_empty() {
        return Ok(Outcome::Empty("every regression diverged".into()));
    }
    Ok(Outcome::Done)
}

fn report(args: &ReportArgs) -> Result<Outcome> {
    let found = collect_summaries(&args.runs)?;
    if found.is_empty() {
        return Ok(Outcome::Empty(format!("no summary.json matched {}", args.runs)));
    }
    let summaries: Vec<_> = found.into_iter().map(|(_, s)| s).collect();
    print!("{}", render_markdown(&summaries));
    for path in write_report(&summaries, &args.out)? {
        println!("{}", path.display());
    }
    Ok(Outcome::Done)
}

/// Helper for callers that build argument lists in code.
pub fn run_args<I, S>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("stainco")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    run(cli)
}
