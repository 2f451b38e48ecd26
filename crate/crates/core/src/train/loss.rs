//! Pixel, perceptual and total losses on `(B, C, H, W)` tensors.

use candle_core::Tensor;

use super::vgg::Vgg19Features;
use crate::error::{Error, Result};

fn check_shapes(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    Ok(())
}

/// Mean absolute difference over every element.
pub fn pixel_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_shapes(pred, gt)?;
    Ok((pred - gt.to_dtype(pred.dtype())?)?.abs()?.mean_all()?)
}

/// Mean absolute difference of VGG activations. The extractor holds plain
/// tensors, so nothing in it is ever updated.
pub fn perceptual_loss(pred: &Tensor, gt: &Tensor, vgg: &Vgg19Features) -> Result<Tensor> {
    check_shapes(pred, gt)?;
    let fp = vgg.features(pred)?;
    let fg = vgg.features(&gt.to_dtype(pred.dtype())?)?.detach();
    Ok((fp - fg)?.abs()?.mean_all()?.to_dtype(pred.dtype())?)
}

/// `alpha1 · pixel + alpha2 · perceptual`. The perceptual term is skipped
/// when `alpha2 == 0`; otherwise an extractor is required.
pub fn total_loss(pred: &Tensor, gt: &Tensor, alpha1: f64, alpha2: f64, vgg: Option<&Vgg19Features>) -> Result<Tensor> {
    let mut loss = (pixel_loss(pred, gt)? * alpha1)?;
    if alpha2 != 0.0 {
        let vgg = vgg.ok_or_else(|| {
            Error::Config("alpha2 > 0 needs pre-trained VGG-19 weights for the perceptual loss".into())
        })?;
        loss = (loss + (perceptual_loss(pred, gt, vgg)? * alpha2)?)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::vgg::VggStage;
    use candle_core::{DType, Device, Var};

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
    }

    fn rand(shape: (usize, usize, usize, usize)) -> Tensor {
        use rand::Rng;
        thread_local!(static RNG: std::cell::RefCell<rand_chacha::ChaCha8Rng> = std::cell::RefCell::new(crate::rng::seeded(9)));
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let v: Vec<f64> = RNG.with(|r| (0..n).map(|_| r.borrow_mut().random()).collect());
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn pixel_loss_cases() {
        let a = rand((1, 1, 4, 4));
        assert_eq!(scalar(&pixel_loss(&a, &a).unwrap()), 0.0);
        let b = (&a + 0.1).unwrap();
        assert!((scalar(&pixel_loss(&b, &a).unwrap()) - 0.1).abs() < 1e-12);
        let c = rand((1, 1, 4, 4));
        let va: Vec<f64> = a.flatten_all().unwrap().to_vec1().unwrap();
        let vc: Vec<f64> = c.flatten_all().unwrap().to_vec1().unwrap();
        let brute = va.iter().zip(&vc).map(|(x, y)| (x - y).abs()).sum::<f64>() / 16.0;
        assert!((scalar(&pixel_loss(&a, &c).unwrap()) - brute).abs() < 1e-7);
        assert!(matches!(pixel_loss(&a, &rand((1, 1, 4, 5))), Err(Error::Shape(_))));
    }

    #[test]
    fn perceptual_loss_cases() {
        let vgg = Vgg19Features::with_random_weights(1, VggStage::Relu3_3, DType::F64).unwrap();
        let a = rand((1, 1, 16, 16));
        assert_eq!(scalar(&perceptual_loss(&a, &a, &vgg).unwrap()), 0.0);
        let b = rand((1, 1, 16, 16));
        let l = scalar(&perceptual_loss(&a, &b, &vgg).unwrap());
        assert!(l > 0.0);
        // shuffle the ground truth by reversing its pixel order
        let vb: Vec<f64> = b.flatten_all().unwrap().to_vec1().unwrap();
        let shuffled = Tensor::from_vec(vb.into_iter().rev().collect::<Vec<_>>(), (1, 1, 16, 16), &Device::Cpu).unwrap();
        assert_ne!(scalar(&perceptual_loss(&a, &shuffled, &vgg).unwrap()), l);
    }

    #[test]
    fn total_loss_weighting() {
        let vgg = Vgg19Features::with_random_weights(2, VggStage::Relu3_3, DType::F64).unwrap();
        let a = rand((1, 1, 16, 16));
        let b = rand((1, 1, 16, 16));
        assert_eq!(scalar(&total_loss(&a, &a, 1.0, 0.05, Some(&vgg)).unwrap()), 0.0);
        let pix = scalar(&pixel_loss(&a, &b).unwrap());
        assert_eq!(scalar(&total_loss(&a, &b, 1.0, 0.0, None).unwrap()), pix);
        let perc = scalar(&perceptual_loss(&a, &b, &vgg).unwrap());
        let tot = scalar(&total_loss(&a, &b, 1.0, 0.05, Some(&vgg)).unwrap());
        assert!((tot - (pix + 0.05 * perc)).abs() < 1e-12);
        assert!(matches!(total_loss(&a, &b, 1.0, 0.05, None), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_wrt_prediction_matches_finite_differences() {
        let vgg = Vgg19Features::with_random_weights(3, VggStage::Relu3_3, DType::F64).unwrap();
        let gt = rand((1, 1, 16, 16));
        let pred = Var::from_tensor(&rand((1, 1, 16, 16))).unwrap();
        let loss = total_loss(pred.as_tensor(), &gt, 1.0, 0.05, Some(&vgg)).unwrap();
        let grads = loss.backward().unwrap();
        let g: Vec<f64> = grads.get(pred.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = pred.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let eps = 1e-6;
        for i in [0usize, 17, 100, 200, 255] {
            let eval = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                let p = Tensor::from_vec(v, (1, 1, 16, 16), &Device::Cpu).unwrap();
                scalar(&total_loss(&p, &gt, 1.0, 0.05, Some(&vgg)).unwrap())
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-12);
            assert!(rel < 1e-3, "pixel {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
}
