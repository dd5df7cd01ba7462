use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stainco::model::VariantKind;
use stainco::training::presets::desk_config;
use stainco::training::store::pretty_canonical;
use stainco::training::ExperimentConfig;
use stainco::StainPair;

fn stainco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stainco"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STAINCO_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> Output {
    stainco(&["synth", "--n", "120", "--seed", seed, "--out", s(dir)])
}

#[test]
fn help_lists_every_command() {
    let out = stainco(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for cmd in ["prepare", "synth", "train", "eval", "analyze-views", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert!(!stainco(&["frobnicate"]).status.success());
}

#[test]
fn synth_is_idempotent_and_guards_its_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    let first = synth(&dir, "3");
    assert!(first.status.success(), "{}", stderr(&first));
    let manifest = dir.join("manifest.csv");
    assert_eq!(stdout(&first).trim(), s(&manifest));
    let before = std::fs::read(&manifest).unwrap();

    let again = synth(&dir, "3");
    assert!(again.status.success());
    assert_eq!(std::fs::read(&manifest).unwrap(), before);

    let other = synth(&dir, "4");
    assert_eq!(other.status.code(), Some(2));
    assert!(stderr(&other).contains("--force"));

    let forced = stainco(&["synth", "--n", "120", "--seed", "4", "--out", s(&dir), "--force"]);
    assert!(forced.status.success());
    assert_ne!(std::fs::read(&manifest).unwrap(), before);
}

#[test]
fn prepare_writes_stain_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    assert!(synth(&dir, "1").status.success());
    let manifest = dir.join("manifest.csv");
    let stains = tmp.path().join("stains");

    let out = stainco(&["prepare", "-m", s(&manifest)]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("train:"));
    assert!(!stains.exists());

    let out = stainco(&["prepare", "-m", s(&manifest), "--deconvolve", "--out", s(&stains)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let files: Vec<PathBuf> = std::fs::read_dir(&stains).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 120);
    let pair = StainPair::read_from(std::fs::File::open(&files[0]).unwrap()).unwrap();
    assert_eq!(pair.shape(), (24, 24));

    assert!(!stainco(&["prepare", "-m", s(&manifest), "--deconvolve"]).status.success());
    let missing = stainco(&["prepare", "-m", s(&tmp.path().join("nope.csv"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_eval_and_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    assert!(synth(&dir, "2").status.success());
    let mut config = desk_config(VariantKind::RgbBaseline, 1.0, dir.join("manifest.csv"));
    config.epochs = 1;
    config.batch_size = 16;
    config.max_steps = Some(2);
    config.seeds = vec![0];
    let config_path = tmp.path().join("tiny.json");
    std::fs::write(&config_path, pretty_canonical(&config).unwrap()).unwrap();
    let runs = tmp.path().join("runs");

    let out = stainco(&["train", "-c", s(&config_path), "--out", s(&runs), "--seeds", "0,1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("rgb_baseline_p100: "));
    let hash = config.hash().unwrap();
    let ckpt = runs.join(&hash).join("1").join("best.ckpt");
    assert!(ckpt.is_file());
    assert!(runs.join(&hash).join("summary.json").is_file());

    let out = stainco(&["eval", "--checkpoint", s(&ckpt), "-m", s(&dir.join("manifest.csv")), "--split", "val"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("val accuracy: "));

    let report_dir = tmp.path().join("report");
    let pattern = format!("{}/*", runs.display());
    let out = stainco(&["report", "--runs", &pattern, "--out", s(&report_dir)]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("| rgb_baseline_p100 |"));
    assert!(report_dir.join("report.md").is_file());

    let nothing = format!("{}/missing*", runs.display());
    let out = stainco(&["report", "--runs", &nothing, "--out", s(&report_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_configs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(stainco(&["train", "-c", s(&path)]).status.code(), Some(2));

    let mut config = desk_config(VariantKind::DualHeCotrain, 0.1, "m.csv");
    config.n_groups = 4;
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = stainco(&["train", "-c", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("groups"));
    assert_eq!(stainco(&["train", "-c", s(&tmp.path().join("absent.json"))]).status.code(), Some(2));
}

#[test]
fn analyze_views_writes_the_regression_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    assert!(synth(&dir, "5").status.success());
    let views = tmp.path().join("views");
    let out = stainco(&[
        "analyze-views",
        "-m",
        s(&dir.join("manifest.csv")),
        "--out",
        s(&views),
        "--pairs",
        "H:E,R:G",
        "--epochs",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(views.join("regression.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let bad_pair = stainco(&["analyze-views", "-m", s(&dir.join("manifest.csv")), "--pairs", "H:H"]);
    assert_eq!(bad_pair.status.code(), Some(2));
}

fn json_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            json_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
}

#[test]
fn shipped_configs_load_and_are_distinct() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files = Vec::new();
    json_files(&root, &mut files);
    assert!(files.len() >= 30, "only {} configs", files.len());
    let mut hashes = std::collections::HashSet::new();
    for f in &files {
        let config = ExperimentConfig::load(f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        assert_eq!(f.file_stem().unwrap().to_str().unwrap(), config.name);
        // Files are stored in their canonical form.
        assert_eq!(std::fs::read_to_string(f).unwrap(), pretty_canonical(&config).unwrap());
        assert!(hashes.insert(config.hash().unwrap()), "{} duplicates another config", f.display());
    }
    let desk = ExperimentConfig::load(root.join("he_cotrain_p10.json")).unwrap();
    assert_eq!((desk.epochs, desk.n_groups, desk.lambda().unwrap()), (30, 10, 0.02));
}
