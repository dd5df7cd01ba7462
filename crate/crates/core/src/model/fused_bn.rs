//! Training-mode batch normalization as one op with a closed-form backward.
//!
//! Built from elementwise tensor ops the same layer records about a dozen
//! graph nodes, each with its own gradient buffer; this op records one.

use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp3, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

/// Per-channel `(mean, biased variance)` of the last forward pass.
type Stats = Arc<Mutex<Option<(Vec<f64>, Vec<f64>)>>>;

struct BatchNormTrain {
    eps: f64,
    stats: Stats,
}

/// `(N, C, rest...)` → `(N, C, S)` with `S` the product of the rest.
fn ncs(shape: &Shape) -> candle_core::Result<(usize, usize, usize)> {
    let dims = shape.dims();
    if dims.len() < 2 {
        candle_core::bail!("batch norm needs at least two dimensions, got {dims:?}");
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

fn slice<'a>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [f32]> {
    let v = match s {
        CpuStorage::F32(v) => v,
        _ => candle_core::bail!("fused batch norm supports f32 only"),
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("fused batch norm needs contiguous inputs"),
    }
}

fn moments(x: &[f32], (n, c, s): (usize, usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let m = (n * s) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let row = &x[(b * c + ch) * s..(b * c + ch + 1) * s];
            mean[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..n {
        for ch in 0..c {
            let row = &x[(b * c + ch) * s..(b * c + ch + 1) * s];
            var[ch] += row.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        xs: &CpuStorage,
        xl: &Layout,
        gs: &CpuStorage,
        gl: &Layout,
        bs: &CpuStorage,
        bl: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (x, gamma, beta) = (slice(xs, xl)?, slice(gs, gl)?, slice(bs, bl)?);
        let dims = ncs(xl.shape())?;
        let (n, c, s) = dims;
        if gamma.len() != c || beta.len() != c {
            candle_core::bail!("batch norm affine parameters do not match {c} channels");
        }
        let (mean, var) = moments(x, dims);
        let mut out = vec![0f32; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let inv = 1.0 / (var[ch] + self.eps).sqrt();
                let scale = (gamma[ch] as f64 * inv) as f32;
                let shift = (beta[ch] as f64 - mean[ch] * gamma[ch] as f64 * inv) as f32;
                let at = (b * c + ch) * s;
                for (o, &v) in out[at..at + s].iter_mut().zip(&x[at..at + s]) {
                    *o = v * scale + shift;
                }
            }
        }
        *self.stats.lock().expect("stats lock") = Some((mean, var));
        Ok((CpuStorage::F32(out), xl.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let dims = ncs(x.shape())?;
        let (n, c, s) = dims;
        let xv: Vec<f32> = x.flatten_all()?.to_vec1()?;
        let gv: Vec<f32> = grad.flatten_all()?.to_vec1()?;
        let gam: Vec<f32> = gamma.to_vec1()?;
        let (mean, var) = moments(&xv, dims);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut d_beta = vec![0.0f64; c];
        let mut d_gamma = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let at = (b * c + ch) * s;
                for (&g, &v) in gv[at..at + s].iter().zip(&xv[at..at + s]) {
                    d_beta[ch] += g as f64;
                    d_gamma[ch] += g as f64 * (v as f64 - mean[ch]) * inv[ch];
                }
            }
        }
        let m = (n * s) as f64;
        let mut dx = vec![0f32; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let at = (b * c + ch) * s;
                let k = gam[ch] as f64 * inv[ch] / m;
                for ((o, &g), &v) in dx[at..at + s].iter_mut().zip(&gv[at..at + s]).zip(&xv[at..at + s]) {
                    let xhat = (v as f64 - mean[ch]) * inv[ch];
                    *o = (k * (m * g as f64 - d_beta[ch] - xhat * d_gamma[ch])) as f32;
                }
            }
        }
        let dev = x.device();
        let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
        Ok((
            Some(Tensor::from_vec(dx, x.shape(), dev)?),
            Some(Tensor::from_vec(to32(d_gamma), c, dev)?),
            Some(Tensor::from_vec(to32(d_beta), c, dev)?),
        ))
    }
}

/// Normalizes `x` with its own per-channel batch statistics and applies the
/// affine map. Returns the output and the batch `(mean, biased variance)`.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if x.dtype() != DType::F32 {
        return Err(Error::Shape(format!("fused batch norm needs f32, got {:?}", x.dtype())));
    }
    let stats: Stats = Arc::new(Mutex::new(None));
    let op = BatchNormTrain {
        eps,
        stats: stats.clone(),
    };
    let y = x.contiguous()?.apply_op3(&gamma.contiguous()?, &beta.contiguous()?, op)?;
    let (mean, var) = stats.lock().expect("stats lock").take().expect("forward stored statistics");
    Ok((y, mean, var))
}
