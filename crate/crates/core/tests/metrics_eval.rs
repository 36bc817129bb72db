use hydra_core::array::Image;
use hydra_core::metrics::{psnr, ssim, SsimConfig, PSNR_CAP_DB};
use hydra_core::rng::{stream, Purpose};
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::naive_ssim;

fn random(n: usize, seed: u64, index: u64) -> Image {
    let mut rng = stream(seed, Purpose::Test, index);
    Image::from_fn(n, |_, _| rng.random())
}

#[test]
fn ssim_matches_the_double_loop_oracle() {
    for k in 0..5 {
        let a = random(32, 1, 2 * k);
        let b = random(32, 1, 2 * k + 1);
        // A correlated pair too.
        let c = Image::from_vec(32, a.data().iter().zip(b.data()).map(|(x, y)| 0.8 * x + 0.2 * y).collect()).unwrap();
        for (x, y) in [(&a, &b), (&a, &c)] {
            let fast = ssim(x, y, &SsimConfig::default()).unwrap();
            let slow = naive_ssim(x, y, 11, 1.5);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }
}

#[test]
fn psnr_offset_anchors() {
    let reference = random(16, 2, 0);
    for (offset, db) in [(0.1, 20.0), (0.01, 40.0)] {
        let x = Image::from_vec(16, reference.data().iter().map(|v| v + offset).collect()).unwrap();
        assert!((psnr(&x, &reference, 1.0).unwrap() - db).abs() < 1e-9);
    }
    assert_eq!(psnr(&reference, &reference, 1.0).unwrap(), PSNR_CAP_DB);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in 0u64..10_000) {
        let a = random(16, seed, 0);
        let b = random(16, seed, 1);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let cfg = SsimConfig::default();
        let s = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((s - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-15);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
    }
}
