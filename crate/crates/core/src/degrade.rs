//! Forward degradation operator `D = H(C; P)`.
//!
//! Two kinds are supported:
//!
//! - **noise**: additive Gaussian noise whose per-pixel standard deviation is
//!   `P(x, y) * 100 / 255` in normalized intensity.
//! - **turbulence**: a surrogate for phase-screen simulation. Each frame is
//!   backward-warped by a smooth random displacement field and then blurred
//!   with a per-pixel Gaussian, both scaled linearly by `P(x, y)`.
//!
//! Every random draw is derived from explicit seeds, so `(clean, pmap, spec)`
//! determines the output bit for bit.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, SmoothFieldSpec};
use crate::frame::{Frame, Sequence};
use crate::pmap::{DegradationKind, ParamMap};
use crate::rng;

/// Number of uniformly blurred copies blended for the spatially varying blur.
pub const BLUR_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub field: SmoothFieldSpec,
    /// Seed for the per-frame randomness (noise draws, warp fields).
    pub seed: u64,
    /// Displacement in pixels at `P = 1`.
    pub max_disp: f64,
    /// Blur standard deviation in pixels at `P = 1`.
    pub max_blur_sigma: f64,
    /// Smoothness of the displacement field in pixels.
    pub warp_scale: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            kind: DegradationKind::Noise,
            field: SmoothFieldSpec::default(),
            seed: 0,
            max_disp: 4.0,
            max_blur_sigma: 2.0,
            warp_scale: 12.0,
        }
    }
}

impl DegradationSpec {
    pub fn turbulence() -> Self {
        DegradationSpec {
            kind: DegradationKind::Turbulence,
            ..Default::default()
        }
    }

    pub fn noise() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if !(self.max_disp >= 0.0) || !(self.max_blur_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "max_disp and max_blur_sigma must be non-negative".into(),
            ));
        }
        if !(self.warp_scale > 0.0) {
            return Err(Error::InvalidArgument("warp_scale must be positive".into()));
        }
        Ok(())
    }
}

pub fn gen_param_map(spec: &DegradationSpec, height: usize, width: usize) -> Result<ParamMap> {
    let values = field::smooth_random_field(&spec.field, height, width)?;
    ParamMap::new(height, width, values, spec.kind)
}

fn expect_kind(pmap: &ParamMap, kind: DegradationKind) -> Result<()> {
    if pmap.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {kind:?} parameter map, got {:?}",
            pmap.kind
        )));
    }
    Ok(())
}

fn check_shape(clean: &Sequence, pmap: &ParamMap) -> Result<()> {
    pmap.check_matches(&clean.frames()[0])
}

/// Adds per-pixel Gaussian noise with std `phys(x, y) / 255` and clips to `[0, 1]`.
pub fn apply_noise(clean: &Sequence, pmap: &ParamMap, seed: u64) -> Result<Sequence> {
    expect_kind(pmap, DegradationKind::Noise)?;
    check_shape(clean, pmap)?;
    let sigmas: Vec<f32> = pmap
        .values()
        .iter()
        .map(|&v| (v as f64 * pmap.phys_max / 255.0) as f32)
        .collect();
    let mut t = 0u64;
    clean.map_frames(|frame| {
        let mut rng = rng::stream(seed, t);
        t += 1;
        let mut out = frame.clone();
        for c in 0..frame.channels() {
            for (v, &s) in out.plane_mut(c).iter_mut().zip(&sigmas) {
                let z: f32 = rand_distr::StandardNormal.sample(&mut rng);
                *v = (*v + s * z).clamp(0.0, 1.0);
            }
        }
        out
    })
}

/// Per-frame displacement field `(dx, dy)` in pixels.
pub fn gen_displacement(
    pmap: &ParamMap,
    spec: &DegradationSpec,
    t: usize,
) -> Result<(Vec<f32>, Vec<f32>)> {
    expect_kind(pmap, DegradationKind::Turbulence)?;
    let (h, w) = (pmap.height(), pmap.width());
    let frame_seed = rng::mix(spec.seed, t as u64);
    let axis = |stream: u64| -> Vec<f32> {
        let mut f = field::filtered_noise(rng::mix(frame_seed, stream), spec.warp_scale, h, w);
        let mean = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
        for v in &mut f {
            *v -= mean as f32;
        }
        let peak = f.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { spec.max_disp as f32 / peak } else { 0.0 };
        f.iter_mut()
            .zip(pmap.values())
            .for_each(|(d, &p)| *d = *d * scale * p);
        f
    };
    let dx = axis(0);
    let dy = axis(1);
    Ok((dx, dy))
}

/// Bilinear backward warp `out(y, x) = src(y + dy, x + dx)` with edge clamping.
pub fn warp_bilinear(src: &Frame, dx: &[f32], dy: &[f32]) -> Frame {
    let (h, w, _) = src.shape();
    let (hm, wm) = ((h - 1) as f32, (w - 1) as f32);
    let mut out = src.clone();
    for c in 0..src.channels() {
        let plane = src.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if dx[i] == 0.0 && dy[i] == 0.0 {
                    continue;
                }
                let sx = (x as f32 + dx[i]).clamp(0.0, wm);
                let sy = (y as f32 + dy[i]).clamp(0.0, hm);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[i] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Per-pixel Gaussian blur with std `max_sigma * level(y, x)`, approximated by
/// linear interpolation between [`BLUR_LEVELS`] uniformly blurred copies.
pub fn spatially_variant_blur(src: &Frame, levels: &[f32], max_sigma: f64) -> Frame {
    let (h, w, _) = src.shape();
    let steps = (BLUR_LEVELS - 1) as f32;
    let mut out = src.clone();
    for c in 0..src.channels() {
        let plane = src.plane(c);
        let copies: Vec<Vec<f32>> = (0..BLUR_LEVELS)
            .map(|k| {
                field::gaussian_blur(plane, h, w, max_sigma * k as f64 / steps as f64)
            })
            .collect();
        for (i, v) in out.plane_mut(c).iter_mut().enumerate() {
            let u = levels[i].clamp(0.0, 1.0) * steps;
            if u == 0.0 {
                continue;
            }
            let k = (u.floor() as usize).min(BLUR_LEVELS - 2);
            let frac = u - k as f32;
            *v = copies[k][i] * (1.0 - frac) + copies[k + 1][i] * frac;
        }
    }
    out
}

/// Warps then blurs every frame; output clipped to `[0, 1]`.
pub fn apply_turbulence(clean: &Sequence, pmap: &ParamMap, spec: &DegradationSpec) -> Result<Sequence> {
    expect_kind(pmap, DegradationKind::Turbulence)?;
    check_shape(clean, pmap)?;
    spec.validate()?;
    let mut frames = Vec::with_capacity(clean.len());
    for (t, frame) in clean.frames().iter().enumerate() {
        let (dx, dy) = gen_displacement(pmap, spec, t)?;
        let warped = warp_bilinear(frame, &dx, &dy);
        let mut blurred = spatially_variant_blur(&warped, pmap.values(), spec.max_blur_sigma);
        blurred.clamp01();
        frames.push(blurred);
    }
    let mut seq = Sequence::new(clean.id.clone(), frames)?;
    seq.frame_rate = clean.frame_rate;
    Ok(seq)
}

/// Dispatches on `spec.kind`.
pub fn degrade(clean: &Sequence, pmap: &ParamMap, spec: &DegradationSpec) -> Result<Sequence> {
    match spec.kind {
        DegradationKind::Noise => apply_noise(clean, pmap, spec.seed),
        DegradationKind::Turbulence => apply_turbulence(clean, pmap, spec),
    }
}
