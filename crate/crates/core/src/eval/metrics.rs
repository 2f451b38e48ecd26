//! Full-reference quality metrics on frames in `[0, 1]`.

use crate::error::{Error, Result};
use crate::field::gaussian_kernel;
use crate::frame::{Frame, Sequence};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
pub const VI_LEVELS: usize = 256;

fn mse(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// `10 · log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// RMSE over the ground-truth range; a constant ground truth divides by 1.
pub fn nrmse(pred: &Frame, gt: &Frame) -> Result<f64> {
    let rmse = mse(pred, gt)?.sqrt();
    let (lo, hi) = gt.min_max();
    let range = (hi - lo) as f64;
    Ok(if range > 0.0 { rmse / range } else { rmse })
}

/// Normalized 2-D Gaussian SSIM window, row-major.
pub fn ssim_window() -> Vec<f64> {
    let k = gaussian_kernel(SSIM_SIGMA);
    let r = k.len() / 2;
    let half = SSIM_WINDOW / 2;
    let taps: Vec<f64> = k[r - half..=r + half].to_vec();
    let s: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &taps {
        for b in &taps {
            w.push(a * b);
        }
    }
    w
}

/// Valid-mode separable filtering of a plane with the 1-D taps.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| taps[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Windowed SSIM (11×11 Gaussian, σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, dynamic
/// range 1) averaged over all fully contained windows and over channels.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (h, w, c) = gt.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_SIGMA);
    let r = k.len() / 2;
    let half = SSIM_WINDOW / 2;
    let s: f64 = k[r - half..=r + half].iter().sum();
    let taps: Vec<f64> = k[r - half..=r + half].iter().map(|v| v / s).collect();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = pred.plane(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = gt.plane(ch).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let sxx = filter_valid(&xx, h, w, &taps);
        let syy = filter_valid(&yy, h, w, &taps);
        let sxy = filter_valid(&xy, h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            acc += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Gray level of a value under 256-level quantization.
pub fn quantize(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (VI_LEVELS - 1) as f32).round()) as usize
}

/// Shannon entropy (nats) from counts. Counts are summed in sorted order so
/// that any permutation of the same multiset gives the identical result.
fn entropy(counts: &[u64], n: u64) -> f64 {
    let mut nz: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    nz.sort_unstable();
    let n = n as f64;
    let s: f64 = nz.iter().map(|&c| c as f64 * (c as f64).ln()).sum();
    n.ln() - s / n
}

/// Variation of information `H(A) + H(B) − 2 I(A; B)` between the
/// 256-level intensity partitions of the two images.
pub fn vi(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (ha, hb, hab) = vi_entropies(pred, gt);
    // I = H(A) + H(B) − H(AB)  ⇒  VI = 2 H(AB) − H(A) − H(B)
    Ok((2.0 * hab - ha - hb).max(0.0))
}

/// `(H(A), H(B), H(A, B))` in nats for the quantized images.
pub fn vi_entropies(a: &Frame, b: &Frame) -> (f64, f64, f64) {
    let mut ca = vec![0u64; VI_LEVELS];
    let mut cb = vec![0u64; VI_LEVELS];
    let mut joint = vec![0u64; VI_LEVELS * VI_LEVELS];
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (qa, qb) = (quantize(x), quantize(y));
        ca[qa] += 1;
        cb[qb] += 1;
        joint[qa * VI_LEVELS + qb] += 1;
    }
    let n = a.data().len() as u64;
    (entropy(&ca, n), entropy(&cb, n), entropy(&joint, n))
}

/// Stacks column `column` of every frame as the rows of a `T × H` image.
pub fn temporal_profile(seq: &Sequence, column: usize) -> Result<Frame> {
    let (h, w, c) = seq.shape();
    if column >= w {
        return Err(Error::InvalidArgument(format!("column {column} outside width {w}")));
    }
    let t = seq.len();
    let mut out = Frame::zeros(t, h, c);
    for (ti, f) in seq.frames().iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                out.set(ch, ti, y, f.get(ch, y, column));
            }
        }
    }
    Ok(out)
}

/// Mean absolute difference between consecutive rows of a profile image;
/// zero for a single row.
pub fn row_to_row_diff(profile: &Frame) -> f64 {
    let (t, h, c) = profile.shape();
    if t < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for ch in 0..c {
        for r in 1..t {
            for x in 0..h {
                s += (profile.get(ch, r, x) as f64 - profile.get(ch, r - 1, x) as f64).abs();
            }
        }
    }
    s / ((t - 1) * h * c) as f64
}
