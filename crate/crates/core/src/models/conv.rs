//! Convolutions as im2col plus one matrix product.
//!
//! Candle's CPU backward for `conv2d` goes through a direct transposed
//! convolution and a kernel-gradient convolution whose "kernel" is the whole
//! gradient map, which dominates training time for small models. Here the
//! patch extraction is a custom op with an explicit scatter-add backward, so
//! both passes run on the matrix-multiply kernel.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_start, image_start, len)` for every in-bounds run of one
    /// patch row; consecutive run elements are `stride` apart in the image.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let n = self.cols();
        for c in 0..self.channels {
            for i in 0..k {
                for j in 0..k {
                    let row = (c * k + i) * k + j;
                    // ox with 0 <= ox * s + j - p < width
                    let lo = p.saturating_sub(j).div_ceil(s);
                    let hi = ((self.width + p).saturating_sub(j + 1) / s + 1).min(self.out_w);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let y = oy * s + i;
                        if y < p || y - p >= self.height {
                            continue;
                        }
                        let src = (c * self.height + y - p) * self.width + lo * s + j - p;
                        f(row * n + oy * self.out_w + lo, src, hi - lo);
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

/// `(B, C, H, W)` → `(B, C·k·k, Ho·Wo)`, zero outside the image.
struct Im2Col(Geometry);

/// Adjoint of [`Im2Col`]: scatter-adds columns back into the image.
struct Col2Im(Geometry);

impl Im2Col {
    fn run<T: WithDType>(&self, x: &[T], batch: usize) -> Vec<T> {
        let g = &self.0;
        let (img, col) = (g.channels * g.height * g.width, g.rows() * g.cols());
        let mut out = vec![T::zero(); batch * col];
        for b in 0..batch {
            let (src, dst) = (&x[b * img..(b + 1) * img], &mut out[b * col..(b + 1) * col]);
            let st = g.stride;
            g.for_each_run(|d, s, len| {
                if st == 1 {
                    dst[d..d + len].copy_from_slice(&src[s..s + len]);
                } else {
                    for t in 0..len {
                        dst[d + t] = src[s + t * st];
                    }
                }
            });
        }
        out
    }
}

impl Col2Im {
    fn run<T: WithDType>(&self, cols: &[T], batch: usize) -> Vec<T> {
        let g = &self.0;
        let (img, col) = (g.channels * g.height * g.width, g.rows() * g.cols());
        let mut out = vec![T::zero(); batch * img];
        for b in 0..batch {
            let (src, dst) = (&cols[b * col..(b + 1) * col], &mut out[b * img..(b + 1) * img]);
            let st = g.stride;
            g.for_each_run(|c, i, len| {
                for t in 0..len {
                    dst[i + t * st] += src[c + t];
                }
            });
        }
        out
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let batch = layout.dims()[0];
        let shape = Shape::from((batch, self.0.rows(), self.0.cols()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.run(contiguous(v, layout)?, batch)),
            CpuStorage::F64(v) => CpuStorage::F64(self.run(contiguous(v, layout)?, batch)),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let batch = layout.dims()[0];
        let g = &self.0;
        let shape = Shape::from((batch, g.channels, g.height, g.width));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.run(contiguous(v, layout)?, batch)),
            CpuStorage::F64(v) => CpuStorage::F64(self.run(contiguous(v, layout)?, batch)),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}

fn out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

/// Patch matrix `(B, C·k·k, Ho·Wo)` with rows ordered `(c, i, j)`.
pub fn im2col(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, channels, height, width) = x.dims4()?;
    if stride == 0 || height + 2 * padding < kernel || width + 2 * padding < kernel {
        return Err(Error::Shape(format!("im2col: kernel {kernel} does not fit {height}x{width}")));
    }
    let g = Geometry {
        channels,
        height,
        width,
        kernel,
        stride,
        padding,
        out_h: out_size(height, kernel, stride, padding),
        out_w: out_size(width, kernel, stride, padding),
    };
    Ok(x.contiguous()?.apply_op1(Im2Col(g))?)
}

/// Matches `Tensor::conv2d(weight, padding, stride, 1, 1)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (b, cin, h, w) = x.dims4()?;
    let (cout, wcin, k, k2) = weight.dims4()?;
    if wcin != cin || k != k2 {
        return Err(Error::Shape(format!("conv2d: input {:?} vs weight {:?}", x.dims(), weight.dims())));
    }
    let (ho, wo) = (out_size(h, k, stride, padding), out_size(w, k, stride, padding));
    let cols = if k == 1 && stride == 1 && padding == 0 {
        x.reshape((b, cin, h * w))?
    } else {
        im2col(x, k, stride, padding)?
    };
    let wm = weight.reshape((cout, cin * k * k))?;
    Ok(wm.broadcast_matmul(&cols)?.reshape((b, cout, ho, wo))?)
}

/// Kernel row feeding output phase `a` from 3×3 neighbourhood row `i`
/// (input row `m + i - 1` for output row `2m + a`), or 16 for none.
const PHASE_TAPS: [[usize; 3]; 2] = [[3, 1, 16], [16, 2, 0]];

/// Matches `Tensor::conv_transpose2d(weight, 1, 0, 2, 1)` for a 4×4 kernel:
/// each of the four output phases is a 3×3 convolution of the input whose
/// taps are a subset of the kernel, so all phases share one patch matrix.
pub fn conv_transpose2d_x2(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (b, cin, h, w) = x.dims4()?;
    let (wcin, cout, k, k2) = weight.dims4()?;
    if wcin != cin || k != 4 || k2 != 4 {
        return Err(Error::Shape(format!(
            "conv_transpose2d_x2: input {:?} vs weight {:?}",
            x.dims(),
            weight.dims()
        )));
    }
    let mut idx = Vec::with_capacity(36);
    for rows in &PHASE_TAPS {
        for cols in &PHASE_TAPS {
            for &r in rows {
                for &s in cols {
                    idx.push(if r == 16 || s == 16 { 16 } else { (r * 4 + s) as u32 });
                }
            }
        }
    }
    let idx = Tensor::from_vec(idx, 36, weight.device())?;
    // slot 16 is a zero tap
    let flat = weight.reshape((cin, cout, 16))?.pad_with_zeros(2, 0, 1)?;
    let wm = flat
        .index_select(&idx, 2)?
        .reshape((cin, cout, 4, 9))?
        .permute((2, 1, 0, 3))?
        .reshape((4 * cout, cin * 9))?;
    let cols = im2col(x, 3, 1, 1)?;
    let y = wm.broadcast_matmul(&cols)?.reshape((b, 2, 2, cout, h, w))?;
    Ok(y.permute((0, 3, 4, 1, 5, 2))?.reshape((b, cout, 2 * h, 2 * w))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn conv2d_matches_candle() {
        let dev = Device::Cpu;
        for &(k, stride, pad, h, w) in &[(3, 1, 1, 9, 7), (3, 2, 1, 9, 8), (3, 2, 1, 8, 8), (1, 1, 0, 5, 6), (5, 1, 2, 6, 6), (3, 1, 0, 7, 9)] {
            let x = Tensor::randn(0f64, 1.0, (2, 3, h, w), &dev).unwrap();
            let wt = Tensor::randn(0f64, 1.0, (4, 3, k, k), &dev).unwrap();
            let want = x.conv2d(&wt, pad, stride, 1, 1).unwrap();
            let got = conv2d(&x, &wt, pad, stride).unwrap();
            assert_eq!(got.dims(), want.dims(), "k{k} s{stride}");
            assert!(max_diff(&got, &want) < 1e-12, "k{k} s{stride} h{h}");
        }
    }

    #[test]
    fn conv_transpose_matches_candle() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f64, 1.0, (2, 3, 5, 4), &dev).unwrap();
        let wt = Tensor::randn(0f64, 1.0, (3, 2, 4, 4), &dev).unwrap();
        let want = x.conv_transpose2d(&wt, 1, 0, 2, 1).unwrap();
        let got = conv_transpose2d_x2(&x, &wt).unwrap();
        assert_eq!(got.dims(), &[2, 2, 10, 8]);
        assert!(max_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn gradients_match_candle() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 2, 6, 6), &dev).unwrap()).unwrap();
        let wt = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 2, 3, 3), &dev).unwrap()).unwrap();
        let wt_t = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 2, 4, 4), &dev).unwrap()).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (2, 2, 6, 6), &dev).unwrap();
        let ours = conv_transpose2d_x2(&conv2d(&x, &wt, 1, 2).unwrap(), &wt_t).unwrap();
        let theirs = x.conv2d(&wt, 1, 2, 1, 1).unwrap().conv_transpose2d(&wt_t, 1, 0, 2, 1).unwrap();
        let ga = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &wt, &wt_t] {
            assert!(max_diff(ga.get(v).unwrap(), gb.get(v).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (1, 2, 7, 5), &dev).unwrap()).unwrap();
        let cols = im2col(&x, 3, 2, 1).unwrap();
        let c = Tensor::randn(0f64, 1.0, cols.dims(), &dev).unwrap();
        let lhs = (&cols * &c).unwrap().sum_all().unwrap();
        let grads = lhs.backward().unwrap();
        let rhs = (x.as_tensor() * grads.get(&x).unwrap()).unwrap().sum_all().unwrap();
        let (l, r) = (lhs.to_scalar::<f64>().unwrap(), rhs.to_scalar::<f64>().unwrap());
        assert!((l - r).abs() < 1e-10 * l.abs().max(1.0));
    }
}
