//! Convolution as patch extraction plus one matrix product.
//!
//! The backend's CPU convolution backward pass goes through a direct
//! transposed convolution that is several times slower than the forward pass.
//! Here the patch matrix op carries its own scatter-add backward, so both
//! directions run through the matrix-multiply kernel.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn rows(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.n * ho * wo
    }

    fn cols(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `kk`.
    fn valid(&self, kk: usize, len: usize, out: usize) -> (usize, usize) {
        // Input index is o·stride + kk − pad; keep it inside [0, len).
        let lo = self.pad.saturating_sub(kk).div_ceil(self.stride);
        let hi = ((len + self.pad).saturating_sub(kk)).div_ceil(self.stride).min(out);
        (lo.min(hi), hi)
    }

    /// Calls `f(dst_range_start, src_start, count)` for every contiguous run of
    /// the patch matrix, laid out as `(C·k·k, N·Ho·Wo)`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_hw();
        let plane = ho * wo;
        let rows = self.rows();
        for ch in 0..self.c {
            for ky in 0..self.k {
                let (y_lo, y_hi) = self.valid(ky, self.h, ho);
                for kx in 0..self.k {
                    let (x_lo, x_hi) = self.valid(kx, self.w, wo);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let col = (ch * self.k + ky) * self.k + kx;
                    for b in 0..self.n {
                        let src_plane = (b * self.c + ch) * self.h * self.w;
                        for oy in y_lo..y_hi {
                            let iy = oy * self.stride + ky - self.pad;
                            let ix0 = x_lo * self.stride + kx - self.pad;
                            let dst = col * rows + b * plane + oy * wo + x_lo;
                            f(dst, src_plane + iy * self.w + ix0, x_hi - x_lo);
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("patch ops need contiguous inputs"),
    }
}

/// `(N, C, H, W)` → `(C·k·k, N·Ho·Wo)`, rows ordered `(c, ky, kx)`.
struct Im2Col(Geometry);

/// Adjoint of [`Im2Col`]: scatter-adds patch rows back into an image.
struct Col2Im(Geometry);

/// Builds the patch matrix front to back, so padding is written once and
/// nothing is zero-filled in advance.
fn gather<T: Copy + Default>(g: &Geometry, src: &[T]) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut out = Vec::with_capacity(g.rows() * g.cols());
    let zero = T::default();
    for ch in 0..g.c {
        for ky in 0..g.k {
            let (y_lo, y_hi) = g.valid(ky, g.h, ho);
            for kx in 0..g.k {
                let (x_lo, x_hi) = g.valid(kx, g.w, wo);
                for b in 0..g.n {
                    let src_plane = (b * g.c + ch) * g.h * g.w;
                    for oy in 0..ho {
                        if oy < y_lo || oy >= y_hi || x_lo >= x_hi {
                            out.resize(out.len() + wo, zero);
                            continue;
                        }
                        let iy = oy * g.stride + ky - g.pad;
                        let from = src_plane + iy * g.w + x_lo * g.stride + kx - g.pad;
                        out.resize(out.len() + x_lo, zero);
                        if g.stride == 1 {
                            out.extend_from_slice(&src[from..from + x_hi - x_lo]);
                        } else {
                            out.extend((0..x_hi - x_lo).map(|i| src[from + i * g.stride]));
                        }
                        out.resize(out.len() + wo - x_hi, zero);
                    }
                }
            }
        }
    }
    debug_assert_eq!(out.len(), g.rows() * g.cols());
    out
}

fn scatter<T: Copy + Default + std::ops::AddAssign>(g: &Geometry, cols: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); g.n * g.c * g.h * g.w];
    let s = g.stride;
    g.for_each_run(|from, dst, count| {
        let src = &cols[from..from + count];
        if s == 1 {
            for (o, v) in out[dst..dst + count].iter_mut().zip(src) {
                *o += *v;
            }
        } else {
            for (i, v) in src.iter().enumerate() {
                out[dst + i * s] += *v;
            }
        }
    });
    out
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(gather(g, contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(gather(g, contiguous(v, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, Shape::from((g.cols(), g.rows()))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(scatter(g, contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(scatter(g, contiguous(v, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, Shape::from((g.n, g.c, g.h, g.w))))
    }
}

/// 2-D convolution (no dilation, no groups) of `(N, C, H, W)` with `(K, C, k, k)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (k_out, c_w, kh, kw) = weight.dims4()?;
    if c != c_w || kh != kw || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "cannot convolve {:?} with {:?} (stride {stride}, padding {padding})",
            x.shape(),
            weight.shape()
        )));
    }
    let g = Geometry {
        n,
        c,
        h,
        w,
        k: kh,
        stride,
        pad: padding,
    };
    let (ho, wo) = g.out_hw();
    let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
    let y = weight.reshape((k_out, c * kh * kw))?.matmul(&cols)?;
    Ok(y.reshape((k_out, n, ho, wo))?.transpose(0, 1)?.contiguous()?)
}
