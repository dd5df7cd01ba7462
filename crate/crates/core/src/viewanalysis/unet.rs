//! Small encoder–decoder with skip connections for image-to-image regression.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::Conv2d;
use crate::model::params::{ParamStore, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub width: usize,
    /// Resolution levels, the bottleneck included.
    pub depth: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self { width: 8, depth: 3 }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || !(1..=5).contains(&self.depth) {
            return Err(Error::Config(format!(
                "regressor needs width > 0 and depth in 1..=5, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Inputs must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

#[derive(Clone, Debug)]
struct DoubleConv(Conv2d, Conv2d);

impl DoubleConv {
    fn new(scope: &Scope, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self(
            Conv2d::new(&scope.pp("conv1"), c_in, c_out, 3, 1, 1, true)?,
            Conv2d::new(&scope.pp("conv2"), c_out, c_out, 3, 1, 1, true)?,
        ))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.1.forward(&self.0.forward(x)?.relu()?)?.relu()?)
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    spec: UNetSpec,
    down: Vec<DoubleConv>,
    bottom: DoubleConv,
    up: Vec<DoubleConv>,
    out: Conv2d,
    params: ParamStore,
}

impl UNet {
    pub fn new(spec: UNetSpec, in_channels: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamStore::new(seed);
        let root = params.root();
        let widths: Vec<usize> = (0..spec.depth).map(|l| spec.width << l).collect();
        let mut down = Vec::new();
        let mut c = in_channels;
        for (l, &w) in widths[..spec.depth - 1].iter().enumerate() {
            down.push(DoubleConv::new(&root.pp(format!("down{l}")), c, w)?);
            c = w;
        }
        let bottom = DoubleConv::new(&root.pp("bottom"), c, widths[spec.depth - 1])?;
        c = widths[spec.depth - 1];
        let mut up = Vec::new();
        for l in (0..spec.depth - 1).rev() {
            up.push(DoubleConv::new(&root.pp(format!("up{l}")), c + widths[l], widths[l])?);
            c = widths[l];
        }
        // Linear output: a 1×1 convolution with no activation.
        let out = Conv2d::new(&root.pp("out"), c, 1, 1, 1, 0, true)?;
        Ok(Self {
            spec,
            down,
            bottom,
            up,
            out,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(N, C, H, W)` → `(N, 1, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let m = self.spec.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}x{w} not divisible by {m}")));
        }
        let mut skips = Vec::new();
        let mut y = x.clone();
        for block in &self.down {
            let s = block.forward(&y)?;
            y = s.avg_pool2d(2)?;
            skips.push(s);
        }
        y = self.bottom.forward(&y)?;
        for block in &self.up {
            let s = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = s.dims4()?;
            y = Tensor::cat(&[&y.upsample_nearest2d(sh, sw)?, &s], 1)?;
            y = block.forward(&y)?;
        }
        self.out.forward(&y)
    }
}
