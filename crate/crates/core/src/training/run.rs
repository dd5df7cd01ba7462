//! One training run: optimization loop, per-epoch validation and best-epoch restore.

use std::collections::HashMap;
use std::time::Instant;

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::extract_channels;
use crate::dataio::augment::{augment_views, eval_views, AugmentationPolicy, Standardization, View};
use crate::dataio::batch::{Batch, BatchPlan};
use crate::dataio::manifest::Split;
use crate::dataio::split::{records_in, select_labeled_subset};
use crate::dataio::tiles::TileDataset;
use crate::error::{Error, Result};
use crate::model::variant::{build_variant, StainCoModel, VariantKind};
use crate::objective::{combined_loss, cross_entropy, scalar, triplet_cotrain_loss};
use crate::rng::{derive_seed, streams};
use crate::training::config::{lr_at, ExperimentConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Digest of the epoch's batch composition and negative pairing.
    pub batch_order: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub variant: VariantKind,
    pub config_hash: String,
    pub seed: u64,
    pub curves: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_time_s: f64,
    pub lambda: f64,
    pub n_labeled: usize,
    pub n_universe: usize,
    pub labeled_groups: Vec<u32>,
    pub steps: usize,
    pub step_losses: Vec<f64>,
}

/// A finished run with its model restored to the best epoch.
pub struct TrainedRun {
    pub result: RunResult,
    pub model: StainCoModel,
    pub standardization: Standardization,
}

/// Branch inputs of every tile, before augmentation.
#[derive(Clone, Debug)]
pub struct PreparedViews {
    pub kind: VariantKind,
    pub views: Vec<Vec<View>>,
}

impl PreparedViews {
    pub fn new(dataset: &TileDataset, kind: &VariantKind) -> Result<Self> {
        let channels = kind.channels();
        let branches = kind.branch_channels();
        let views = dataset
            .tiles
            .par_iter()
            .map(|tile| {
                let planes = extract_channels(tile, &channels);
                let by_channel: HashMap<_, _> = channels.iter().copied().zip(planes).collect();
                branches
                    .iter()
                    .map(|bc| View::new(bc.clone(), bc.iter().map(|c| by_channel[c].clone()).collect()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: kind.clone(),
            views,
        })
    }

    pub fn fit_standardization(&self, indices: &[usize]) -> Result<Standardization> {
        Standardization::fit(indices.iter().flat_map(|&i| self.views[i].iter()))
    }
}

/// Stacks samples into one `(N, C, H, W)` tensor per branch.
pub fn stack_branches(samples: &[Vec<View>], device: &Device) -> Result<Vec<Tensor>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot stack an empty batch".into()))?;
    let (h, w) = first[0].shape();
    (0..first.len())
        .map(|b| {
            let c = first[b].channels.len();
            let mut data = Vec::with_capacity(samples.len() * c * h * w);
            for s in samples {
                if s[b].shape() != (h, w) || s[b].channels.len() != c {
                    return Err(Error::Shape("batch samples differ in shape".into()));
                }
                for p in &s[b].planes {
                    data.extend_from_slice(p.data());
                }
            }
            Ok(Tensor::from_vec(data, (samples.len(), c, h, w), device)?)
        })
        .collect()
}

fn argmax_rows(probs: &Tensor) -> Result<Vec<u8>> {
    let idx: Vec<u32> = probs.argmax(D::Minus1)?.to_vec1()?;
    Ok(idx.into_iter().map(|i| i as u8).collect())
}

/// Class predictions under the deterministic evaluation transform.
pub fn predict(
    model: &StainCoModel,
    views: &PreparedViews,
    indices: &[usize],
    crop: usize,
    stats: &Standardization,
    batch_size: usize,
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let samples = chunk
            .par_iter()
            .map(|&i| eval_views(&views.views[i], crop, stats))
            .collect::<Result<Vec<_>>>()?;
        let inputs = stack_branches(&samples, model.device())?;
        out.extend(argmax_rows(&model.predict_proba(&inputs)?)?);
    }
    Ok(out)
}

/// Fraction of correct predictions; every tile must be labeled.
pub fn accuracy_of(predictions: &[u8], labels: &[Option<u8>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty split".into()));
    }
    let mut correct = 0usize;
    for (p, l) in predictions.iter().zip(labels) {
        let l = l.ok_or_else(|| Error::InvalidInput("split contains unlabeled tiles".into()))?;
        correct += usize::from(*p == l);
    }
    Ok(correct as f64 / predictions.len() as f64)
}

pub fn split_accuracy(
    model: &StainCoModel,
    dataset: &TileDataset,
    views: &PreparedViews,
    indices: &[usize],
    crop: usize,
    stats: &Standardization,
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty split".into()));
    }
    let labels: Vec<Option<u8>> = indices.iter().map(|&i| dataset.records[i].label).collect();
    if labels.iter().any(Option::is_none) {
        return Err(Error::InvalidInput("split contains unlabeled tiles".into()));
    }
    let preds = predict(model, views, indices, crop, stats, batch_size)?;
    accuracy_of(&preds, &labels)
}

fn batch_digest(batches: &[Batch]) -> String {
    let mut h = Sha256::new();
    for b in batches {
        for list in [&b.labeled, &b.unlabeled, &b.negatives] {
            for &i in list {
                h.update((i as u64).to_le_bytes());
            }
            h.update([0xff]);
        }
        h.update([0xfe]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Trains one replicate. The returned model holds the best-epoch weights.
pub fn train_one_run(config: &ExperimentConfig, dataset: &TileDataset, seed: u64) -> Result<TrainedRun> {
    config.validate()?;
    let views = PreparedViews::new(dataset, &config.variant)?;
    train_prepared(config, dataset, &views, seed)
}

/// Like [`train_one_run`] with branch inputs already extracted.
pub fn train_prepared(
    config: &ExperimentConfig,
    dataset: &TileDataset,
    views: &PreparedViews,
    seed: u64,
) -> Result<TrainedRun> {
    let started = Instant::now();
    if views.kind != config.variant || views.views.len() != dataset.len() {
        return Err(Error::Config("prepared views do not match the config and dataset".into()));
    }
    let crop = config.augmentation.crop_size;
    let id_to_index: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.tile_id.as_str(), i))
        .collect();
    let train_records = records_in(&dataset.records, Split::Train);
    let subset = select_labeled_subset(&train_records, config.n_groups, seed)?;
    subset.check_group_leakage()?;
    let labeled: Vec<usize> = subset.labeled.iter().map(|r| id_to_index[r.tile_id.as_str()]).collect();
    let universe: Vec<usize> = subset.unlabeled.iter().map(|r| id_to_index[r.tile_id.as_str()]).collect();
    let val = dataset.indices(Split::Val);
    let test = dataset.indices(Split::Test);
    if val.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("dataset needs non-empty val and test splits".into()));
    }
    let stats = views.fit_standardization(&universe)?;
    let labels: Vec<u8> = labeled
        .iter()
        .map(|&i| dataset.records[i].label.expect("labeled subset holds labels"))
        .collect();

    let lambda = config.lambda()?;
    let contrastive = config.uses_contrastive();
    let plan = BatchPlan::new(
        labeled.len(),
        universe.len(),
        config.batch_size,
        config.labeled_per_batch(),
        derive_seed(seed, &[streams::LABELED_ORDER]),
    )?;
    let policy = AugmentationPolicy {
        rng_seed: derive_seed(seed, &[streams::AUGMENT]),
        ..config.augmentation.clone()
    };

    let model = build_variant(&config.variant, &config.encoder_spec(), seed)?;
    let mut opt = AdamW::new(
        model.params().all_trainable(),
        ParamsAdamW {
            lr: config.initial_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
    )?;

    let mut curves = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(usize, f64, _)> = None;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..config.epochs {
        let lr = lr_at(config.initial_lr, epoch, config.epochs, &config.lr_schedule);
        opt.set_learning_rate(lr);
        let batches = plan.epoch(epoch);
        let digest = batch_digest(&batches);
        let (mut loss_sum, mut n_steps, mut correct, mut seen) = (0.0, 0usize, 0usize, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            if step_losses.len() >= max_steps {
                break;
            }
            let members: Vec<usize> = batch
                .labeled
                .iter()
                .map(|&l| labeled[l])
                .chain(batch.unlabeled.iter().map(|&u| universe[u]))
                .collect();
            let samples = members
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let sample = (b * config.batch_size + slot) as u64;
                    augment_views(&views.views[i], &policy, &stats, policy.sample_seed(epoch, sample)).map(|r| r.0)
                })
                .collect::<Result<Vec<_>>>()?;
            let inputs = stack_branches(&samples, model.device())?;
            let features = model.features(&inputs, true)?;
            let n_l = batch.labeled.len();
            let logits = model.logits(&features)?.narrow(0, 0, n_l)?;
            let batch_labels: Vec<u8> = batch.labeled.iter().map(|&l| labels[l]).collect();
            let loss = if contrastive {
                let triplet = triplet_cotrain_loss(&features[0], &features[1], &batch.negatives, config.margin)?;
                combined_loss(&logits, &batch_labels, &triplet, lambda)?
            } else {
                cross_entropy(&logits, &batch_labels)?
            };
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {value} at epoch {epoch}, batch {b} (seed {seed})"
                )));
            }
            opt.backward_step(&loss)?;
            let preds = argmax_rows(&logits)?;
            correct += preds.iter().zip(&batch_labels).filter(|(p, l)| p == l).count();
            seen += n_l;
            loss_sum += value;
            n_steps += 1;
            step_losses.push(value);
        }
        if n_steps == 0 {
            break 'epochs;
        }
        let val_acc = split_accuracy(&model, dataset, views, &val, crop, &stats, config.eval_batch_size)?;
        log::debug!("{} seed {seed} epoch {epoch}: loss {:.4} val {:.4}", config.name, loss_sum / n_steps as f64, val_acc);
        curves.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n_steps as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc,
            batch_order: digest,
        });
        // Strict improvement only: ties keep the earliest epoch.
        if best.as_ref().is_none_or(|(_, v, _)| val_acc > *v) {
            best = Some((epoch, val_acc, model.params().snapshot()?));
        }
    }

    let (best_epoch, best_val_accuracy, snapshot) =
        best.ok_or_else(|| Error::Config("run finished without a completed epoch".into()))?;
    model.params().restore(&snapshot)?;
    let test_accuracy = split_accuracy(&model, dataset, views, &test, crop, &stats, config.eval_batch_size)?;
    let result = RunResult {
        name: config.name.clone(),
        variant: config.variant.clone(),
        config_hash: config.hash()?,
        seed,
        curves,
        best_epoch,
        best_val_accuracy,
        test_accuracy,
        wall_time_s: started.elapsed().as_secs_f64(),
        lambda: if contrastive { lambda } else { 0.0 },
        n_labeled: labeled.len(),
        n_universe: universe.len(),
        labeled_groups: subset.buckets[subset.labeled_bucket].clone(),
        steps: step_losses.len(),
        step_losses,
    };
    Ok(TrainedRun {
        result,
        model,
        standardization: stats,
    })
}
