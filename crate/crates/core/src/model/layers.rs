use candle_core::{Tensor, Var};

use crate::error::Result;
use crate::model::fused_bn::batch_norm_train;
use crate::model::params::{Init, Scope};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        scope: &Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = scope.param("weight", &[c_out, c_in, kernel, kernel], Init::KaimingFanOut)?;
        let bias = if bias {
            Some(scope.param("bias", &[c_out], Init::UniformFanIn(c_in * kernel * kernel))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = crate::model::im2col::conv2d(x, &self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// Batch normalization over dim 1 with running statistics for evaluation.
///
/// Training mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate (momentum 0.1).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(scope: &Scope, features: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[features], Init::Const(1.0))?,
            bias: scope.param("bias", &[features], Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", &[features], Init::Const(0.0))?,
            running_var: scope.buffer("running_var", &[features], Init::Const(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn running_mean(&self) -> &Tensor {
        self.running_mean.as_tensor()
    }

    pub fn running_var(&self) -> &Tensor {
        self.running_var.as_tensor()
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let c = dims[1];
        if train {
            let (y, mean, var) = batch_norm_train(x, &self.weight, &self.bias, self.eps)?;
            let count = (x.elem_count() / c) as f64;
            let m = self.momentum;
            let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let old_mean: Vec<f32> = self.running_mean.as_tensor().to_vec1()?;
            let old_var: Vec<f32> = self.running_var.as_tensor().to_vec1()?;
            let new_mean: Vec<f32> = old_mean
                .iter()
                .zip(&mean)
                .map(|(&o, &b)| ((1.0 - m) * o as f64 + m * b) as f32)
                .collect();
            let new_var: Vec<f32> = old_var
                .iter()
                .zip(&var)
                .map(|(&o, &b)| ((1.0 - m) * o as f64 + m * b * correction) as f32)
                .collect();
            self.running_mean.set(&Tensor::from_vec(new_mean, c, x.device())?)?;
            self.running_var.set(&Tensor::from_vec(new_var, c, x.device())?)?;
            return Ok(y);
        }
        let mut bshape = vec![1usize; dims.len()];
        bshape[1] = c;
        let mean = self.running_mean.as_detached_tensor().reshape(bshape.as_slice())?;
        let var = self.running_var.as_detached_tensor().reshape(bshape.as_slice())?;
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape(bshape.as_slice())?)?
            .broadcast_add(&self.bias.reshape(bshape.as_slice())?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(scope: &Scope, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[c_out, c_in], Init::UniformFanIn(c_in))?,
            bias: scope.param("bias", &[c_out], Init::UniformFanIn(c_in))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::{DType, Device};

    /// Elementwise reference of the training-mode forward pass.
    fn reference(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        let c = x.dim(1).unwrap();
        let mut bshape = vec![1usize; x.rank()];
        bshape[1] = c;
        let flat = x.transpose(0, 1).unwrap().flatten_from(1).unwrap().contiguous().unwrap();
        let mean = flat.mean_keepdim(1).unwrap();
        let var = flat.broadcast_sub(&mean).unwrap().sqr().unwrap().mean_keepdim(1).unwrap();
        let (mean, var) = (mean.reshape(bshape.as_slice()).unwrap(), var.reshape(bshape.as_slice()).unwrap());
        x.broadcast_sub(&mean)
            .unwrap()
            .broadcast_div(&(var + eps).unwrap().sqrt().unwrap())
            .unwrap()
            .broadcast_mul(&gamma.reshape(bshape.as_slice()).unwrap())
            .unwrap()
            .broadcast_add(&beta.reshape(bshape.as_slice()).unwrap())
            .unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar().unwrap()
    }

    #[test]
    fn fused_training_pass_matches_reference() {
        let dev = Device::Cpu;
        for shape in [vec![6, 3, 4, 5], vec![7, 4]] {
            let x = candle_core::Var::from_tensor(&Tensor::randn(0.5f32, 2.0, shape.as_slice(), &dev).unwrap()).unwrap();
            let g = candle_core::Var::from_tensor(&Tensor::randn(1f32, 0.3, shape[1], &dev).unwrap()).unwrap();
            let b = candle_core::Var::from_tensor(&Tensor::randn(0f32, 0.3, shape[1], &dev).unwrap()).unwrap();
            let probe = Tensor::randn(0f32, 1.0, shape.as_slice(), &dev).unwrap();
            let (ours, _, _) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
            let theirs = reference(&x, &g, &b, 1e-5);
            assert!(max_diff(&ours, &theirs) < 1e-5);
            let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &g, &b] {
                assert!(max_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-4);
            }
        }
    }

    #[test]
    fn running_statistics_track_batches() {
        let store = ParamStore::new(0);
        let bn = BatchNorm::new(&store.root().pp("bn"), 2).unwrap();
        let x = Tensor::new(&[[1f32, 10.0], [3.0, 30.0]], &Device::Cpu).unwrap();
        bn.forward(&x, true).unwrap();
        let mean: Vec<f32> = bn.running_mean().to_vec1().unwrap();
        let var: Vec<f32> = bn.running_var().to_vec1().unwrap();
        // momentum 0.1 from (0, 1); unbiased variances 2 and 200.
        assert!((mean[0] - 0.2).abs() < 1e-6 && (mean[1] - 2.0).abs() < 1e-5);
        assert!((var[0] - 1.1).abs() < 1e-6 && (var[1] - 20.9).abs() < 1e-4);
        let _ = DType::F32;
    }
}
