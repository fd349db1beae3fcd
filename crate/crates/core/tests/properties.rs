//! Randomised invariants of the metrics and divergences.

use proptest::prelude::*;
use stemsynth::eval::{kld, r2, score_enhancement, shared_edges, ParamHistogram, R2, REALISM_BINS};
use stemsynth::image::{psnr, ssim};
use stemsynth::ImageGray;

fn hist(edges: &[f64], values: &[f64]) -> ParamHistogram {
    ParamHistogram::new("x", "c", edges.to_vec(), values).unwrap()
}

fn image(w: usize, h: usize) -> impl Strategy<Value = ImageGray> {
    prop::collection::vec(0.0..255.0f64, w * h).prop_map(move |d| ImageGray::new(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kld_is_nonnegative_and_zero_on_itself(
        a in prop::collection::vec(-50.0..50.0f64, 1..60),
        b in prop::collection::vec(-50.0..50.0f64, 1..60),
    ) {
        prop_assume!(a.iter().chain(&b).any(|v| *v != a[0]));
        let edges = shared_edges(&a, &b, REALISM_BINS).unwrap();
        let (p, q) = (hist(&edges, &a), hist(&edges, &b));
        prop_assert_eq!(p.total(), a.len());
        let d = kld(&p, &q).unwrap();
        prop_assert!(d >= 0.0 && d.is_finite());
        prop_assert!(kld(&p, &p).unwrap().abs() <= 1e-9);
        if p.probabilities(1e-6) != q.probabilities(1e-6) {
            prop_assert!(d > 0.0);
        }
    }

    #[test]
    fn r2_of_identical_curves_is_one(c in prop::collection::vec(-10.0..10.0f64, 3..30)) {
        prop_assume!(c.iter().any(|v| (*v - c[0]).abs() > 1e-6));
        match r2(&c, &c).unwrap() {
            R2::Value(v) => prop_assert!((v - 1.0).abs() < 1e-12),
            R2::ZeroVariance => prop_assert!(false, "unexpected zero variance"),
        }
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(a in image(12, 12), b in image(12, 12)) {
        let (p1, p2) = (psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        prop_assert!(p1 == p2 || (p1.is_infinite() && p2.is_infinite()));
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn enhancement_score_ignores_pair_order(
        imgs in prop::collection::vec((image(12, 12), image(12, 12)), 2..6),
        rot in 0usize..6,
    ) {
        let pairs: Vec<(&ImageGray, &ImageGray)> = imgs.iter().map(|(a, b)| (a, b)).collect();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (x, y) = (score_enhancement(&pairs).unwrap(), score_enhancement(&shuffled).unwrap());
        prop_assert!((x.mean_psnr - y.mean_psnr).abs() < 1e-9);
        prop_assert!((x.mean_ssim - y.mean_ssim).abs() < 1e-12);
        prop_assert_eq!(x.pairs, y.pairs);
    }
}
