//! Property tests for the restoration metrics.

use proptest::prelude::*;

use dparnet::eval::{nrmse, psnr, ssim, temporal_profile, vi};
use dparnet::{Frame, Sequence};

const SIDE: usize = 16;

fn frame() -> impl Strategy<Value = Frame> {
    prop::collection::vec(0.0f32..=1.0, SIDE * SIDE).prop_map(|v| Frame::new(SIDE, SIDE, 1, v).unwrap())
}

fn lerp(a: &Frame, b: &Frame, t: f32) -> Frame {
    Frame::from_fn(SIDE, SIDE, 1, |c, y, x| (1.0 - t) * a.get(c, y, x) + t * b.get(c, y, x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_and_bounded(a in frame(), b in frame()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((vi(&a, &b).unwrap() - vi(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(vi(&a, &b).unwrap() >= 0.0);
        prop_assert!(nrmse(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn identity_is_optimal(a in frame(), b in frame()) {
        prop_assert!(psnr(&a, &a).unwrap() >= psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(nrmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(vi(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn degrade_monotonically_towards_noise(gt in frame(), noise in frame()) {
        prop_assume!(psnr(&noise, &gt).unwrap() < 60.0);
        let ts = [0.1f32, 0.3, 0.5, 0.7, 0.9];
        let preds: Vec<Frame> = ts.iter().map(|&t| lerp(&gt, &noise, t)).collect();
        for w in preds.windows(2) {
            prop_assert!(psnr(&w[1], &gt).unwrap() < psnr(&w[0], &gt).unwrap());
            prop_assert!(nrmse(&w[1], &gt).unwrap() > nrmse(&w[0], &gt).unwrap());
            prop_assert!(ssim(&w[1], &gt).unwrap() <= ssim(&w[0], &gt).unwrap() + 1e-12);
        }
    }

    #[test]
    fn static_sequences_have_flat_profiles(a in frame(), col in 0usize..SIDE) {
        let seq = Sequence::new("s", vec![a; 4]).unwrap();
        let p = temporal_profile(&seq, col).unwrap();
        prop_assert_eq!(dparnet::eval::row_to_row_diff(&p), 0.0);
    }
}
