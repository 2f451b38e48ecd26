//! Seeded smooth random fields and separable Gaussian filtering.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Smallest field edge accepted by [`smooth_random_field`].
pub const MIN_FIELD_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothFieldSpec {
    /// Gaussian filter standard deviation in pixels.
    pub length_scale: f64,
    pub min_frac: f64,
    pub max_frac: f64,
    pub seed: u64,
}

impl Default for SmoothFieldSpec {
    fn default() -> Self {
        SmoothFieldSpec {
            length_scale: 16.0,
            min_frac: 0.0,
            max_frac: 1.0,
            seed: 0,
        }
    }
}

impl SmoothFieldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "length_scale must be >= 1 pixel, got {}",
                self.length_scale
            )));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.min_frac) || !unit.contains(&self.max_frac) || self.min_frac > self.max_frac {
            return Err(Error::InvalidArgument(format!(
                "field span [{}, {}] must satisfy 0 <= min <= max <= 1",
                self.min_frac, self.max_frac
            )));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps, truncated at four standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Half-sample symmetric index into `0..n`.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of a row-major `height × width` plane.
///
/// `sigma <= 0` returns the input unchanged.
pub fn gaussian_blur(plane: &[f32], height: usize, width: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as i64;
    let mut tmp = vec![0.0f64; height * width];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect(x as i64 + k as i64 - r, width)] as f64;
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[reflect(y as i64 + k as i64 - r, height) * width + x];
            }
            out[y * width + x] = acc as f32;
        }
    }
    out
}

/// Standard normal white noise, blurred with std `sigma`.
pub fn filtered_noise(seed: u64, sigma: f64, height: usize, width: usize) -> Vec<f32> {
    let mut rng = rng::seeded(seed);
    let white: Vec<f32> = (0..height * width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    gaussian_blur(&white, height, width, sigma)
}

/// Gaussian-filtered white noise affinely rescaled onto `[min_frac, max_frac]`.
pub fn smooth_random_field(spec: &SmoothFieldSpec, height: usize, width: usize) -> Result<Vec<f32>> {
    if height < MIN_FIELD_SIZE || width < MIN_FIELD_SIZE {
        return Err(Error::InvalidArgument(format!(
            "field dimensions {height}x{width} below the {MIN_FIELD_SIZE}x{MIN_FIELD_SIZE} minimum"
        )));
    }
    spec.validate()?;
    let (lo, hi) = (spec.min_frac as f32, spec.max_frac as f32);
    if lo == hi {
        return Ok(vec![lo; height * width]);
    }
    let raw = filtered_noise(spec.seed, spec.length_scale, height, width);
    let (rmin, rmax) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = rmax - rmin;
    if span <= 0.0 {
        return Ok(vec![lo; height * width]);
    }
    Ok(raw
        .into_iter()
        .map(|v| (lo + (v - rmin) / span * (hi - lo)).clamp(lo, hi))
        .collect())
}

/// Sum of absolute horizontal and vertical neighbour differences.
pub fn total_variation(field: &[f32], height: usize, width: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = field[y * width + x] as f64;
            if x + 1 < width {
                tv += (field[y * width + x + 1] as f64 - v).abs();
            }
            if y + 1 < height {
                tv += (field[(y + 1) * width + x] as f64 - v).abs();
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(length_scale: f64, seed: u64) -> SmoothFieldSpec {
        SmoothFieldSpec {
            length_scale,
            min_frac: 0.0,
            max_frac: 1.0,
            seed,
        }
    }

    /// Mean lag-`lag` autocorrelation along both axes, computed directly.
    fn autocorrelation(f: &[f32], h: usize, w: usize, lag: usize) -> f64 {
        let mean = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / f.len() as f64;
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                let a = f[y * w + x] as f64 - mean;
                if x + lag < w {
                    acc += a * (f[y * w + x + lag] as f64 - mean);
                    n += 1;
                }
                if y + lag < h {
                    acc += a * (f[(y + lag) * w + x] as f64 - mean);
                    n += 1;
                }
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn zero_span_is_constant() {
        let s = SmoothFieldSpec {
            length_scale: 3.0,
            min_frac: 0.5,
            max_frac: 0.5,
            seed: 99,
        };
        let f = smooth_random_field(&s, 16, 16).unwrap();
        assert!(f.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn deterministic() {
        let a = smooth_random_field(&spec(4.0, 7), 32, 32).unwrap();
        let b = smooth_random_field(&spec(4.0, 7), 32, 32).unwrap();
        assert_eq!(a, b);
        let c = smooth_random_field(&spec(4.0, 8), 32, 32).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spans_requested_range() {
        let s = SmoothFieldSpec {
            length_scale: 5.0,
            min_frac: 0.2,
            max_frac: 0.7,
            seed: 1,
        };
        let f = smooth_random_field(&s, 40, 24).unwrap();
        let (lo, hi) = f.iter().fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((lo - 0.2).abs() < 1e-6 && (hi - 0.7).abs() < 1e-6);
    }

    #[test]
    fn autocorrelation_decays_with_lag() {
        let f = smooth_random_field(&spec(8.0, 3), 64, 64).unwrap();
        let near = autocorrelation(&f, 64, 64, 4);
        let far = autocorrelation(&f, 64, 64, 16);
        assert!(near > far, "lag4 {near} lag16 {far}");
    }

    #[test]
    fn smoothing_is_monotone_in_total_variation() {
        for seed in [0u64, 5, 11] {
            let tvs: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
                .iter()
                .map(|&l| total_variation(&smooth_random_field(&spec(l, seed), 64, 64).unwrap(), 64, 64))
                .collect();
            assert!(tvs.windows(2).all(|w| w[1] <= w[0]), "{tvs:?}");
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(smooth_random_field(&spec(2.0, 0), 0, 16).is_err());
        assert!(smooth_random_field(&spec(2.0, 0), 16, 4).is_err());
        assert!(smooth_random_field(&spec(0.5, 0), 16, 16).is_err());
        let mut s = spec(2.0, 0);
        s.min_frac = 0.8;
        s.max_frac = 0.2;
        assert!(smooth_random_field(&s, 16, 16).is_err());
    }

    #[test]
    fn blur_preserves_constant_and_mass() {
        let p = vec![0.3f32; 20 * 10];
        let b = gaussian_blur(&p, 20, 10, 2.5);
        assert!(b.iter().all(|v| (v - 0.3).abs() < 1e-6));
        let k = gaussian_kernel(1.7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(12, 5), 2);
    }
}
