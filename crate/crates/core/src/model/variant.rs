//! Model variants: the H/E dual encoder and its single-input baselines.
//!
//! Every variant is a set of branches (one residual encoder plus a feature
//! batch-norm each) feeding one linear+softmax head. With two branches the
//! head reads the average of the two normalized feature vectors, and the
//! same normalized features enter the contrastive loss.

use std::collections::HashMap;

use candle_core::{Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::model::layers::{BatchNorm, Linear};
use crate::model::params::ParamStore;
use crate::model::resnet::{EncoderSpec, ResNetEncoder};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantKind {
    DualHeCotrain,
    RgbBaseline,
    HOnly,
    EOnly,
    TwoChannelBaseline { channels: [Channel; 2] },
    DualChannelPairCotrain { channels: [Channel; 2] },
}

impl VariantKind {
    /// Channels consumed by each branch.
    pub fn branch_channels(&self) -> Vec<Vec<Channel>> {
        match self {
            VariantKind::DualHeCotrain => vec![vec![Channel::H], vec![Channel::E]],
            VariantKind::RgbBaseline => vec![vec![Channel::R, Channel::G, Channel::B]],
            VariantKind::HOnly => vec![vec![Channel::H]],
            VariantKind::EOnly => vec![vec![Channel::E]],
            VariantKind::TwoChannelBaseline { channels } => vec![channels.to_vec()],
            VariantKind::DualChannelPairCotrain { channels } => vec![vec![channels[0]], vec![channels[1]]],
        }
    }

    pub fn is_cotrain(&self) -> bool {
        self.branch_channels().len() == 2
    }

    pub fn in_channels(&self) -> usize {
        self.branch_channels()[0].len()
    }

    /// Every channel any branch reads, deduplicated, in first-use order.
    pub fn channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        for c in self.branch_channels().into_iter().flatten() {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VariantKind::TwoChannelBaseline { channels } | VariantKind::DualChannelPairCotrain { channels } => {
                if channels[0] == channels[1] {
                    return Err(Error::Config(format!("channel pair repeats {}", channels[0])));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `H/E co-train` or `RB ResNet`.
    pub fn label(&self) -> String {
        match self {
            VariantKind::DualHeCotrain => "H/E co-train".into(),
            VariantKind::RgbBaseline => "RGB ResNet".into(),
            VariantKind::HOnly => "H ResNet".into(),
            VariantKind::EOnly => "E ResNet".into(),
            VariantKind::TwoChannelBaseline { channels } => format!("{}{} ResNet", channels[0], channels[1]),
            VariantKind::DualChannelPairCotrain { channels } => format!("{}/{} co-train", channels[0], channels[1]),
        }
    }
}

fn branch_name(channels: &[Channel]) -> String {
    channels.iter().map(|c| c.letter()).collect()
}

/// Per-branch features `(f_H, f_E)`, each `batch × D`.
#[derive(Clone, Debug)]
pub struct DualFeatures {
    pub f_h: Tensor,
    pub f_e: Tensor,
}

impl DualFeatures {
    pub fn new(f_h: Tensor, f_e: Tensor) -> Result<Self> {
        if f_h.dims() != f_e.dims() || f_h.rank() != 2 {
            return Err(Error::Shape(format!(
                "dual features must share a (batch, D) shape: {:?} vs {:?}",
                f_h.shape(),
                f_e.shape()
            )));
        }
        Ok(Self { f_h, f_e })
    }

    /// `0.5·(f_H + f_E)`.
    pub fn averaged(&self) -> Result<Tensor> {
        Ok(((&self.f_h + &self.f_e)? * 0.5)?)
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn feature_dim(&self) -> usize {
        self.linear.in_features()
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let d = features.dim(D::Minus1)?;
        if features.rank() != 2 || d != self.feature_dim() {
            return Err(Error::Shape(format!(
                "head expects (batch, {}), got {:?}",
                self.feature_dim(),
                features.shape()
            )));
        }
        self.linear.forward(features)
    }

    /// Softmax class probabilities of a single feature matrix.
    pub fn classify(&self, features: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.logits(features)?, D::Minus1)?)
    }

    /// Probabilities for the averaged dual features.
    pub fn classify_dual(&self, features: &DualFeatures) -> Result<Tensor> {
        self.classify(&features.averaged()?)
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub name: String,
    pub channels: Vec<Channel>,
    pub encoder: ResNetEncoder,
    pub feature_norm: BatchNorm,
}

impl Branch {
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let f = self.encoder.forward(x, train)?;
        self.feature_norm.forward(&f, train)
    }
}

#[derive(Clone, Debug)]
pub struct StainCoModel {
    kind: VariantKind,
    spec: EncoderSpec,
    branches: Vec<Branch>,
    head: ClassifierHead,
    params: ParamStore,
}

impl StainCoModel {
    pub fn kind(&self) -> &VariantKind {
        &self.kind
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Normalized features of every branch; `inputs[i]` is `(N, C_i, H, W)`.
    pub fn features(&self, inputs: &[Tensor], train: bool) -> Result<Vec<Tensor>> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} branches",
                inputs.len(),
                self.branches.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let (n, _, h, w) = first.dims4()?;
            for x in inputs {
                let (n2, _, h2, w2) = x.dims4()?;
                if (n2, h2, w2) != (n, h, w) {
                    return Err(Error::Shape(format!(
                        "branch inputs disagree: {:?} vs {:?}",
                        first.shape(),
                        x.shape()
                    )));
                }
            }
        }
        self.branches
            .iter()
            .zip(inputs)
            .map(|(b, x)| b.forward(x, train))
            .collect()
    }

    pub fn forward_dual(&self, h: &Tensor, e: &Tensor, train: bool) -> Result<DualFeatures> {
        if self.branches.len() != 2 {
            return Err(Error::Config(format!("{} has a single branch", self.kind.label())));
        }
        let mut f = self.features(&[h.clone(), e.clone()], train)?;
        let f_e = f.pop().expect("two branches");
        let f_h = f.pop().expect("two branches");
        DualFeatures::new(f_h, f_e)
    }

    /// The head input: the branch feature, or the mean of both.
    pub fn combine(&self, features: &[Tensor]) -> Result<Tensor> {
        match features {
            [single] => Ok(single.clone()),
            [h, e] => DualFeatures::new(h.clone(), e.clone())?.averaged(),
            _ => Err(Error::Shape(format!("cannot combine {} feature sets", features.len()))),
        }
    }

    pub fn logits(&self, features: &[Tensor]) -> Result<Tensor> {
        self.head.logits(&self.combine(features)?)
    }

    pub fn predict_proba(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let f = self.features(inputs, false)?;
        self.head.classify(&self.combine(&f)?)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Trainable parameters of one branch (encoder plus feature norm).
    pub fn branch_parameter_count(&self, index: usize) -> usize {
        self.params
            .trainable_count_under(&format!("{}.", self.branches[index].name))
    }

    pub fn head_parameter_count(&self) -> usize {
        self.params.trainable_count_under("head.")
    }
}

/// Builds a freshly initialized model; initialization is a function of `seed`.
pub fn build_variant(kind: &VariantKind, spec: &EncoderSpec, seed: u64) -> Result<StainCoModel> {
    kind.validate()?;
    spec.validate()?;
    if spec.in_channels != kind.in_channels() {
        return Err(Error::Config(format!(
            "{} needs {}-channel encoders, the encoder spec has {}",
            kind.label(),
            kind.in_channels(),
            spec.in_channels
        )));
    }
    let params = ParamStore::new(seed);
    let root = params.root();
    let mut branches = Vec::new();
    for channels in kind.branch_channels() {
        let name = branch_name(&channels);
        let scope = root.pp(&name);
        let encoder = ResNetEncoder::new(&scope.pp("encoder"), spec)?;
        let feature_norm = BatchNorm::new(&scope.pp("feature_bn"), spec.feature_dim)?;
        branches.push(Branch {
            name,
            channels,
            encoder,
            feature_norm,
        });
    }
    let head = ClassifierHead {
        linear: Linear::new(&root.pp("head"), spec.feature_dim, NUM_CLASSES)?,
    };
    let model = StainCoModel {
        kind: kind.clone(),
        spec: spec.clone(),
        branches,
        head,
        params,
    };
    if let Some(path) = &spec.pretrained {
        let weights = candle_core::safetensors::load(path, &Device::Cpu)?;
        load_pretrained(&model, &weights)?;
    }
    Ok(model)
}

/// Collapses a 3-channel first-layer kernel `(K, 3, k, k)` to one input
/// channel by summing over the channel axis. On gray inputs the adapted
/// convolution reproduces the original exactly (convolution is linear).
pub fn adapt_first_layer(kernels: &Tensor) -> Result<Tensor> {
    let dims = kernels.dims();
    if dims.len() != 4 || dims[1] != 3 {
        return Err(Error::Shape(format!(
            "first-layer adaptation needs (K, 3, k, k) kernels, got {:?}",
            kernels.shape()
        )));
    }
    Ok(kernels.sum_keepdim(1)?)
}

/// Keeps the kernel slices of the selected RGB channels.
pub fn select_first_layer_channels(kernels: &Tensor, channels: &[usize]) -> Result<Tensor> {
    let dims = kernels.dims();
    if dims.len() != 4 || dims[1] != 3 || channels.iter().any(|&c| c > 2) {
        return Err(Error::Shape(format!(
            "cannot select channels {channels:?} from kernels {:?}",
            kernels.shape()
        )));
    }
    let idx: Vec<u32> = channels.iter().map(|&c| c as u32).collect();
    Ok(kernels.index_select(&Tensor::new(idx.as_slice(), kernels.device())?, 1)?)
}

fn rgb_index(c: Channel) -> Option<usize> {
    match c {
        Channel::R => Some(0),
        Channel::G => Some(1),
        Channel::B => Some(2),
        _ => None,
    }
}

/// Copies 3-channel pretrained encoder weights into every branch, adapting
/// the first convolution to the branch's input channels. Head and feature
/// norms keep their fresh initialization.
pub fn load_pretrained(model: &StainCoModel, weights: &HashMap<String, Tensor>) -> Result<()> {
    let names: Vec<String> = model.params.snapshot()?.into_keys().collect();
    for branch in &model.branches {
        let prefix = format!("{}.encoder.", branch.name);
        for name in names.iter().filter(|n| n.starts_with(&prefix)) {
            let key = &name[prefix.len()..];
            let src = weights
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("pretrained weights lack {key}")))?;
            let value = if key == "conv1.weight" {
                let rgb: Option<Vec<usize>> = branch.channels.iter().map(|&c| rgb_index(c)).collect();
                match rgb {
                    Some(idx) if idx == [0, 1, 2] => src.clone(),
                    Some(idx) => select_first_layer_channels(src, &idx)?,
                    None if branch.channels.len() == 1 => adapt_first_layer(src)?,
                    None => {
                        return Err(Error::Config(format!(
                            "no first-layer adaptation for channels {:?}",
                            branch.channels
                        )))
                    }
                }
            } else {
                src.clone()
            };
            model.params.set(name, &value)?;
        }
    }
    Ok(())
}
