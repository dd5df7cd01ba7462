//! View independence: how well one channel predicts another.
//!
//! A small U-Net regresses the target channel from the input channel with a
//! pixel-wise MSE; the coefficient of determination on held-out tiles, at the
//! epoch of lowest validation MSE, measures how much of the target is
//! explained by the input. Stain channels that carry separate tissue content
//! should predict each other worse than the strongly correlated RGB channels.

pub mod unet;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::rng::{stream, streams};
use crate::stain::RgbTile;
use crate::training::report::bar_chart_svg;

pub use crate::channel::extract_channel;
pub use unet::{UNet, UNetSpec};

/// `1 − Σ(ŷ−y)² / Σ(y−ȳ)²`, pooled over every element.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("r_squared of no values".into()));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let sst: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Err(Error::InvalidInput("targets have zero variance".into()));
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(1.0 - sse / sst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSettings {
    pub regressor: UNetSpec,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        Self {
            regressor: UNetSpec::default(),
            epochs: 15,
            lr: 3e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl RegressionSettings {
    pub fn validate(&self) -> Result<()> {
        self.regressor.validate()?;
        if self.epochs == 0 || !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(format!("bad regression settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRegressionTask {
    pub input: Channel,
    pub target: Channel,
    pub settings: RegressionSettings,
}

impl ChannelRegressionTask {
    pub fn new(input: Channel, target: Channel, settings: RegressionSettings) -> Result<Self> {
        if input == target {
            return Err(Error::Config(format!("input and target are both {input}")));
        }
        Ok(Self { input, target, settings })
    }

    pub fn label(&self) -> String {
        format!("{} ⇒ {}", self.input, self.target)
    }
}

/// The eight directed pairs H⇄E, R⇄G, R⇄B, G⇄B.
pub fn standard_pairs() -> Vec<(Channel, Channel)> {
    use Channel::*;
    vec![(H, E), (E, H), (R, G), (G, R), (R, B), (B, R), (G, B), (B, G)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMse {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionEntry {
    pub input: String,
    pub target: String,
    pub r2: f64,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub curve: Vec<EpochMse>,
}

/// Stacks planes into `(N, 1, H, W)`, after `(v − mean) / std`.
fn stack(planes: &[Plane], mean: f64, std: f64, device: &Device) -> Result<Tensor> {
    let (h, w) = planes[0].shape();
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if p.shape() != (h, w) {
            return Err(Error::Shape("regression planes differ in shape".into()));
        }
        data.extend(p.data().iter().map(|&v| ((v as f64 - mean) / std) as f32));
    }
    Ok(Tensor::from_vec(data, (planes.len(), 1, h, w), device)?)
}

fn moments(planes: &[Plane]) -> (f64, f64) {
    let n: usize = planes.iter().map(|p| p.data().len()).sum();
    let mean = planes.iter().flat_map(|p| p.data()).map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = planes
        .iter()
        .flat_map(|p| p.data())
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt().max(1e-8))
}

/// Predictions in target units; `x` and `y` are the `(mean, std)` pairs of
/// input and target.
fn predict_all(net: &UNet, inputs: &[Plane], x: (f64, f64), y: (f64, f64), batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for chunk in inputs.chunks(batch) {
        let t = stack(chunk, x.0, x.1, net.params().device())?;
        let p: Vec<f32> = net.forward(&t)?.flatten_all()?.to_vec1()?;
        out.extend(p.into_iter().map(|v| f64::from(v) * y.1 + y.0));
    }
    Ok(out)
}

/// Fits a regressor from input planes to target planes; the entry reports
/// R² and MSE at the epoch with lowest validation MSE.
///
/// Inputs and targets are both standardized with training-set moments, so
/// the returned network predicts standardized targets.
pub fn train_plane_regressor(
    train: (&[Plane], &[Plane]),
    val: (&[Plane], &[Plane]),
    settings: &RegressionSettings,
) -> Result<(UNet, RegressionEntry)> {
    settings.validate()?;
    let (train_x, train_y) = train;
    let (val_x, val_y) = val;
    if train_x.is_empty() || val_x.is_empty() || train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::InvalidInput("regression needs non-empty, aligned tile sets".into()));
    }
    let x_moments = moments(train_x);
    let y_moments = moments(train_y);
    let net = UNet::new(settings.regressor, 1, settings.seed)?;
    let mut opt = AdamW::new(
        net.params().all_trainable(),
        ParamsAdamW {
            lr: settings.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let val_targets: Vec<f64> = val_y.iter().flat_map(|p| p.data()).map(|&v| v as f64).collect();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(usize, f64, f64, _)> = None;
    for epoch in 0..settings.epochs {
        order.shuffle(&mut stream(settings.seed, &[streams::REGRESSION, epoch as u64]));
        let (mut sse, mut count) = (0.0, 0usize);
        for chunk in order.chunks(settings.batch_size) {
            let xs: Vec<Plane> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<Plane> = chunk.iter().map(|&i| train_y[i].clone()).collect();
            let x = stack(&xs, x_moments.0, x_moments.1, net.params().device())?;
            let y = stack(&ys, y_moments.0, y_moments.1, net.params().device())?;
            let loss = (net.forward(&x)? - y)?.sqr()?.mean_all()?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("regression MSE {value} at epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            let n = chunk.len() * train_x[0].data().len();
            sse += value * y_moments.1 * y_moments.1 * n as f64;
            count += n;
        }
        let preds = predict_all(&net, val_x, x_moments, y_moments, settings.batch_size)?;
        let val_mse =
            preds.iter().zip(&val_targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / preds.len() as f64;
        let val_r2 = r_squared(&preds, &val_targets)?;
        curve.push(EpochMse {
            epoch,
            train_mse: sse / count as f64,
            val_mse,
            val_r2,
        });
        if best.as_ref().is_none_or(|b| val_mse < b.1) {
            best = Some((epoch, val_mse, val_r2, net.params().snapshot()?));
        }
    }
    let (best_epoch, val_mse, r2, snapshot) = best.expect("at least one epoch");
    net.params().restore(&snapshot)?;
    let entry = RegressionEntry {
        input: String::new(),
        target: String::new(),
        r2,
        best_epoch,
        val_mse,
        curve,
    };
    Ok((net, entry))
}

/// Center-crops to the largest size the regressor accepts.
fn fit_planes(planes: Vec<Plane>, multiple: usize) -> Result<Vec<Plane>> {
    planes
        .into_iter()
        .map(|p| {
            let (h, w) = p.shape();
            let (h2, w2) = (h - h % multiple, w - w % multiple);
            if h2 == 0 || w2 == 0 {
                return Err(Error::Shape(format!("tile {h}x{w} is smaller than {multiple}")));
            }
            if (h2, w2) == (h, w) {
                Ok(p)
            } else {
                p.center_crop(h2, w2)
            }
        })
        .collect()
}

fn channel_planes(tiles: &[RgbTile], c: Channel, multiple: usize) -> Result<Vec<Plane>> {
    fit_planes(tiles.iter().map(|t| extract_channel(t, c)).collect(), multiple)
}

pub fn train_regressor(
    task: &ChannelRegressionTask,
    train_tiles: &[RgbTile],
    val_tiles: &[RgbTile],
) -> Result<(UNet, RegressionEntry)> {
    if task.input == task.target {
        return Err(Error::Config("input and target channels must differ".into()));
    }
    let m = task.settings.regressor.size_multiple();
    let tx = channel_planes(train_tiles, task.input, m)?;
    let ty = channel_planes(train_tiles, task.target, m)?;
    let vx = channel_planes(val_tiles, task.input, m)?;
    let vy = channel_planes(val_tiles, task.target, m)?;
    let (net, mut entry) = train_plane_regressor((&tx, &ty), (&vx, &vy), &task.settings)?;
    entry.input = task.input.to_string();
    entry.target = task.target.to_string();
    Ok((net, entry))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub entries: Vec<RegressionEntry>,
    /// Tasks that failed, with the reason.
    pub failed: Vec<(String, String)>,
}

impl RegressionReport {
    pub fn get(&self, input: Channel, target: Channel) -> Option<&RegressionEntry> {
        let (i, t) = (input.to_string(), target.to_string());
        self.entries.iter().find(|e| e.input == i && e.target == t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("input,target,r2,best_epoch,val_mse\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{:.6},{},{:.8}", e.input, e.target, e.r2, e.best_epoch, e.val_mse);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("mapping   R²       best epoch  val MSE\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} ⇒ {}     {:<8.4} {:<11} {:.6}",
                e.input, e.target, e.r2, e.best_epoch, e.val_mse
            );
        }
        for (task, why) in &self.failed {
            let _ = writeln!(out, "{task}     failed: {why}");
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let bars: Vec<(String, f64, f64)> = self
            .entries
            .iter()
            .map(|e| (format!("{} ⇒ {}", e.input, e.target), e.r2, 0.0))
            .collect();
        bar_chart_svg("R² of channel-to-channel regression", &bars, 0.0, 1.0)
    }

    /// Writes `regression.csv`, `regression.txt` and `regression.svg`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for (name, body) in [
            ("regression.csv", self.to_csv()),
            ("regression.txt", self.to_table()),
            ("regression.svg", self.to_svg()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Trains every distinct task (duplicates are dropped with a warning).
pub fn independence_report(
    tasks: &[ChannelRegressionTask],
    train_tiles: &[RgbTile],
    val_tiles: &[RgbTile],
) -> Result<RegressionReport> {
    let mut report = RegressionReport::default();
    let mut seen: Vec<(Channel, Channel)> = Vec::new();
    for task in tasks {
        let key = (task.input, task.target);
        if seen.contains(&key) {
            log::warn!("duplicate regression task {} skipped", task.label());
            continue;
        }
        seen.push(key);
        match train_regressor(task, train_tiles, val_tiles) {
            Ok((_, entry)) => report.entries.push(entry),
            Err(e) if matches!(e, Error::Diverged(_)) => report.failed.push((task.label(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
