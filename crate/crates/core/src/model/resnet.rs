//! Residual CNN encoders (basic-block ResNet family).
//!
//! Parameter names follow the usual `conv1`, `bn1`, `layerN.M.*` layout so
//! 3-channel pretrained weights exported under those names can be loaded
//! directly.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{BatchNorm, Conv2d};
use crate::model::params::Scope;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Architecture {
    /// 18-layer network: 7×7 stride-2 stem, max-pool, four stages of two
    /// blocks with widths 64..512.
    Resnet18,
    /// Desk-scale network: 3×3 stem, three stages of one block with widths
    /// `w, 2w, 4w`.
    ResnetTiny { width: usize },
}

impl Architecture {
    fn stages(&self) -> Vec<(usize, usize, usize)> {
        match *self {
            Architecture::Resnet18 => vec![(64, 2, 1), (128, 2, 2), (256, 2, 2), (512, 2, 2)],
            Architecture::ResnetTiny { width } => vec![(width, 1, 1), (2 * width, 1, 2), (4 * width, 1, 2)],
        }
    }

    /// Width of the penultimate (pooled) layer.
    pub fn feature_dim(&self) -> usize {
        self.stages().last().expect("non-empty").0
    }

    fn stem_width(&self) -> usize {
        self.stages()[0].0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub architecture: Architecture,
    pub in_channels: usize,
    pub feature_dim: usize,
    /// Safetensors file with 3-channel weights under the standard names.
    #[serde(default)]
    pub pretrained: Option<std::path::PathBuf>,
}

impl EncoderSpec {
    pub fn new(architecture: Architecture, in_channels: usize) -> Self {
        Self {
            architecture,
            in_channels,
            feature_dim: architecture.feature_dim(),
            pretrained: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.in_channels) {
            return Err(Error::Config(format!("in_channels {} not in 1..=3", self.in_channels)));
        }
        if self.feature_dim != self.architecture.feature_dim() {
            return Err(Error::Config(format!(
                "feature_dim {} does not match the architecture width {}",
                self.feature_dim,
                self.architecture.feature_dim()
            )));
        }
        if let Architecture::ResnetTiny { width } = self.architecture {
            if width == 0 {
                return Err(Error::Config("tiny resnet width must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(scope: &Scope, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let downsample = if stride != 1 || c_in != c_out {
            let ds = scope.pp("downsample");
            Some((
                Conv2d::new(&ds.pp(0), c_in, c_out, 1, stride, 0, false)?,
                BatchNorm::new(&ds.pp(1), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&scope.pp("conv1"), c_in, c_out, 3, stride, 1, false)?,
            bn1: BatchNorm::new(&scope.pp("bn1"), c_out)?,
            conv2: Conv2d::new(&scope.pp("conv2"), c_out, c_out, 3, 1, 1, false)?,
            bn2: BatchNorm::new(&scope.pp("bn2"), c_out)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + shortcut)?.relu()?)
    }
}

#[derive(Clone, Debug)]
pub struct ResNetEncoder {
    spec: EncoderSpec,
    conv1: Conv2d,
    bn1: BatchNorm,
    stages: Vec<Vec<BasicBlock>>,
}

impl ResNetEncoder {
    pub fn new(scope: &Scope, spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let arch = spec.architecture;
        let stem = arch.stem_width();
        let conv1 = match arch {
            Architecture::Resnet18 => Conv2d::new(&scope.pp("conv1"), spec.in_channels, stem, 7, 2, 3, false)?,
            Architecture::ResnetTiny { .. } => {
                Conv2d::new(&scope.pp("conv1"), spec.in_channels, stem, 3, 1, 1, false)?
            }
        };
        let bn1 = BatchNorm::new(&scope.pp("bn1"), stem)?;
        let mut stages = Vec::new();
        let mut c_in = stem;
        for (i, (width, blocks, stride)) in arch.stages().into_iter().enumerate() {
            let layer = scope.pp(format!("layer{}", i + 1));
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let s = if b == 0 { stride } else { 1 };
                stage.push(BasicBlock::new(&layer.pp(b), c_in, width, s)?);
                c_in = width;
            }
            stages.push(stage);
        }
        Ok(Self {
            spec: spec.clone(),
            conv1,
            bn1,
            stages,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn first_conv(&self) -> &Conv2d {
        &self.conv1
    }

    /// `(N, C, H, W)` → `(N, feature_dim)` after global average pooling.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let mut y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        if self.spec.architecture == Architecture::Resnet18 {
            // Post-ReLU activations are non-negative, so zero padding acts as -inf padding.
            y = y.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?.max_pool2d_with_stride(3, 2)?;
        }
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y, train)?;
            }
        }
        Ok(y.mean((2, 3))?)
    }
}
