//! Contrastive co-training loss and the combined semi-supervised objective.
//!
//! For every sample `i` in a batch with a random partner `k != i`:
//!
//! ```text
//! loss_i = max(‖f_h[i] − f_e[i]‖₂ − ‖f_h[i] − f_e[k]‖₂ + margin, 0)
//! ```
//!
//! averaged over the batch. The combined objective adds `λ` times this term
//! to the mean cross-entropy of the labeled samples.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::dataio::batch::is_derangement;
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoTrainHyperparams {
    pub margin: f64,
    pub lambda: f64,
}

impl CoTrainHyperparams {
    pub fn new(margin: f64, lambda: f64) -> Result<Self> {
        if !(margin >= 0.0) || !(lambda >= 0.0) {
            return Err(Error::Config(format!(
                "margin ({margin}) and lambda ({lambda}) must be non-negative"
            )));
        }
        Ok(Self { margin, lambda })
    }

    /// Margin 40 and `λ = 0.2·p`.
    pub fn for_label_fraction(p: f64) -> Result<Self> {
        Self::new(DEFAULT_MARGIN, lambda_from_label_fraction(p)?)
    }
}

/// `λ = 0.2·p` for a labeled fraction `p ∈ (0, 1]`.
pub fn lambda_from_label_fraction(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("label fraction {p} outside (0, 1]")));
    }
    // Division keeps the common fractions exact: 0.1 / 5 == 0.02, while 0.2 * 0.1 is not.
    Ok(p / 5.0)
}

/// Row-wise Euclidean norm of a rank-2 tensor. The gradient at a zero row is
/// zero rather than NaN.
struct RowNorm;

impl RowNorm {
    fn rows<T: num_like::Float>(data: &[T], layout: &Layout) -> Result<Vec<T>, candle_core::Error> {
        let (n, d) = layout.shape().dims2()?;
        let data = match layout.contiguous_offsets() {
            Some((start, end)) => &data[start..end],
            None => candle_core::bail!("row norm needs a contiguous input"),
        };
        Ok((0..n)
            .map(|i| data[i * d..(i + 1) * d].iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt())
            .collect())
    }
}

mod num_like {
    pub trait Float: Copy + std::ops::Add<Output = Self> + std::ops::Mul<Output = Self> {
        fn zero() -> Self;
        fn sqrt(self) -> Self;
    }

    impl Float for f32 {
        fn zero() -> Self {
            0.0
        }
        fn sqrt(self) -> Self {
            f32::sqrt(self)
        }
    }

    impl Float for f64 {
        fn zero() -> Self {
            0.0
        }
        fn sqrt(self) -> Self {
            f64::sqrt(self)
        }
    }
}

impl CustomOp1 for RowNorm {
    fn name(&self) -> &'static str {
        "row-norm"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, _) = layout.shape().dims2()?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(Self::rows(v, layout)?),
            CpuStorage::F64(v) => CpuStorage::F64(Self::rows(v, layout)?),
            _ => candle_core::bail!("row norm supports f32 and f64 only"),
        };
        Ok((out, Shape::from(n)))
    }

    fn bwd(&self, arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let positive = res.gt(0.0)?;
        let safe = positive.where_cond(res, &res.ones_like()?)?;
        let scale = positive.where_cond(&(grad_res / safe)?, &res.zeros_like()?)?;
        Ok(Some(arg.broadcast_mul(&scale.unsqueeze(1)?)?))
    }
}

pub fn row_norms(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(RowNorm)?)
}

fn check_features(f_h: &Tensor, f_e: &Tensor, negatives: &[usize]) -> Result<usize> {
    let (n, d) = f_h.dims2().map_err(|_| Error::Shape(format!("f_h must be rank 2, got {:?}", f_h.shape())))?;
    if f_e.dims() != [n, d] {
        return Err(Error::Shape(format!(
            "f_h is {:?} but f_e is {:?}",
            f_h.shape(),
            f_e.shape()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("batch of {n} has no valid negative")));
    }
    if negatives.len() != n || negatives.iter().enumerate().any(|(i, &k)| k == i || k >= n) {
        return Err(Error::InvalidInput(
            "negative map must pair every index with a different in-batch index".into(),
        ));
    }
    Ok(n)
}

/// Per-sample hinge terms `max(d_pos − d_neg + margin, 0)`, shape `(batch,)`.
pub fn triplet_terms(f_h: &Tensor, f_e: &Tensor, negatives: &[usize], margin: f64) -> Result<Tensor> {
    check_features(f_h, f_e, negatives)?;
    let idx: Vec<u32> = negatives.iter().map(|&k| k as u32).collect();
    let idx = Tensor::new(idx.as_slice(), f_e.device())?;
    let f_neg = f_e.index_select(&idx, 0)?;
    let d_pos = row_norms(&(f_h - f_e)?)?;
    let d_neg = row_norms(&(f_h - &f_neg)?)?;
    Ok(((d_pos - d_neg)? + margin)?.relu()?)
}

/// Mean triplet co-training loss over the batch (a scalar tensor).
///
/// `negatives` is usually a derangement; any map without fixed points is
/// accepted.
pub fn triplet_cotrain_loss(f_h: &Tensor, f_e: &Tensor, negatives: &[usize], margin: f64) -> Result<Tensor> {
    if margin < 0.0 {
        return Err(Error::Config(format!("negative margin {margin}")));
    }
    Ok(triplet_terms(f_h, f_e, negatives, margin)?.mean_all()?)
}

/// Like [`triplet_cotrain_loss`] but insists on a permutation.
pub fn triplet_cotrain_loss_deranged(f_h: &Tensor, f_e: &Tensor, negatives: &[usize], margin: f64) -> Result<Tensor> {
    if !is_derangement(negatives) {
        return Err(Error::InvalidInput("negative map is not a derangement".into()));
    }
    triplet_cotrain_loss(f_h, f_e, negatives, margin)
}

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let (n, _) = logits.dims2()?;
    if n != labels.len() || n == 0 {
        return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    let labels: Vec<u32> = labels.iter().map(|&l| u32::from(l)).collect();
    let labels = Tensor::new(labels.as_slice(), logits.device())?;
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = log_probs.gather(&labels.unsqueeze(1)?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

/// `cross_entropy(logits, labels) + λ·triplet`.
pub fn combined_loss(logits: &Tensor, labels: &[u8], triplet: &Tensor, lambda: f64) -> Result<Tensor> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("negative lambda {lambda}")));
    }
    let ce = cross_entropy(logits, labels)?;
    let triplet = triplet.to_dtype(ce.dtype())?;
    Ok((ce + (triplet * lambda)?)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn lambda_rejects_out_of_range() {
        assert!(lambda_from_label_fraction(0.0).is_err());
        assert!(lambda_from_label_fraction(1.5).is_err());
        assert!(lambda_from_label_fraction(f64::NAN).is_err());
        assert_eq!(lambda_from_label_fraction(0.5).unwrap(), 0.1);
    }

    #[test]
    fn zero_distance_gradient_is_finite() {
        let dev = Device::Cpu;
        let f = Var::from_tensor(&Tensor::zeros((3, 4), DType::F64, &dev).unwrap()).unwrap();
        let g = Tensor::zeros((3, 4), DType::F64, &dev).unwrap();
        let loss = triplet_cotrain_loss(f.as_tensor(), &g, &[1, 2, 0], 1.0).unwrap();
        let grads = loss.backward().unwrap();
        let grad: Vec<Vec<f64>> = grads.get(f.as_tensor()).unwrap().to_vec2().unwrap();
        assert!(grad.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(scalar(&loss).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_batches() {
        let dev = Device::Cpu;
        let a = Tensor::zeros((1, 4), DType::F32, &dev).unwrap();
        assert!(triplet_cotrain_loss(&a, &a, &[0], 1.0).is_err());
        let b = Tensor::zeros((3, 4), DType::F32, &dev).unwrap();
        let c = Tensor::zeros((3, 5), DType::F32, &dev).unwrap();
        assert!(triplet_cotrain_loss(&b, &c, &[1, 2, 0], 1.0).is_err());
        assert!(triplet_cotrain_loss(&b, &b, &[0, 2, 1], 1.0).is_err());
        assert!(triplet_cotrain_loss_deranged(&b, &b, &[1, 0, 0], 1.0).is_err());
        assert!(triplet_cotrain_loss(&b, &b, &[1, 0, 0], 1.0).is_ok());
    }
}
