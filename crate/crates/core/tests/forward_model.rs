use hydra_core::array::{Image, Sinogram};
use hydra_core::linalg::{norm, power_iteration, LinearMap};
use hydra_core::radon::{equispaced_angles, strided_mask, Geometry, RadonOperator};
use hydra_core::rng::{stream, Purpose};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::{dot_gap, dot_gap_f32};

fn uniform(len: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Test, index);
    (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn operator(n: usize, angles: usize) -> RadonOperator {
    RadonOperator::new(n, equispaced_angles(angles), n, 1.0).unwrap()
}

#[test]
fn dot_test_at_64_in_both_precisions() {
    let op = operator(64, 64);
    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    for k in 0..20 {
        let x = uniform(64 * 64, 11, 2 * k);
        let u = uniform(op.range_len(), 11, 2 * k + 1);
        worst64 = worst64.max(dot_gap(&op, &x, &u));
        worst32 = worst32.max(dot_gap_f32(&op, &x, &u));
    }
    assert!(worst64 < 1e-12, "f64 gap {worst64:e}");
    assert!(worst32 < 1e-5, "f32 gap {worst32:e}");
}

#[test]
fn power_estimate_matches_dense_svd() {
    let op = operator(16, 64);
    let dense = op.to_dense();
    let m = DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data);
    let sigma = m.singular_values().max();
    let est = power_iteration(&op, 200, 5);
    let rel = (est - sigma * sigma).abs() / (sigma * sigma);
    assert!(rel < 0.01, "power {est} vs svd {} ({rel:e})", sigma * sigma);
}

#[test]
fn power_estimate_plateaus_by_100_iterations() {
    let mut op = RadonOperator::from_geometry(&Geometry {
        n_views: 64,
        ..Geometry::sparse(64, 64)
    })
    .unwrap();
    let a = op.estimate_operator_norm(100, 0);
    let b = op.estimate_operator_norm(200, 0);
    assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
}

#[test]
fn full_projection_of_constant_matches_chord_lengths() {
    // The unit image fills [−1, 1]², so every vertical ray has length 2.
    let n = 32;
    let op = operator(n, 4);
    let s = op.forward(&Image::from_fn(n, |_, _| 1.0)).unwrap();
    for k in 2..n - 2 {
        assert!((s.row(0)[k] - 2.0).abs() < 1e-9, "bin {k}: {}", s.row(0)[k]);
    }
}

#[test]
fn masked_operator_is_a_row_selection() {
    let g = Geometry::sparse(32, 16);
    let full = RadonOperator::new(32, g.full_angles(), 32, 1.0).unwrap();
    let sparse = RadonOperator::from_geometry(&g).unwrap();
    assert_eq!(sparse.mask(), strided_mask(384, 16).as_slice());
    let x = Image::from_vec(32, uniform(32 * 32, 3, 0)).unwrap();
    let s_full = full.forward(&x).unwrap();
    let s_sparse = sparse.forward(&x).unwrap();
    assert_eq!(sparse.select_views(&s_full).unwrap(), s_sparse);
}

fn geometry() -> impl Strategy<Value = (usize, usize)> {
    (prop::sample::select(vec![16usize, 32, 64]), prop::sample::select(vec![4usize, 16, 64]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_linear((n, angles) in geometry(), seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let op = operator(n, angles);
        let x1 = uniform(n * n, seed, 0);
        let x2 = uniform(n * n, seed, 1);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let lhs = op.apply(&mix);
        let (y1, y2) = (op.apply(&x1), op.apply(&x2));
        let scale = norm(&y1).max(norm(&y2)) * (a.abs() + b.abs()) + 1e-300;
        for k in 0..lhs.len() {
            prop_assert!((lhs[k] - (a * y1[k] + b * y2[k])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_passes_dot_test((n, angles) in geometry(), seed in 0u64..1000) {
        let op = operator(n, angles);
        let x = uniform(n * n, seed, 2);
        let u = uniform(op.range_len(), seed, 3);
        prop_assert!(dot_gap(&op, &x, &u) < 1e-12);
        prop_assert!(dot_gap_f32(&op, &x, &u) < 1e-5);
    }

    #[test]
    fn gradient_map_is_nonexpansive(seed in 0u64..1000, views in prop::sample::select(vec![8usize, 16, 32])) {
        let n = 16;
        let mut op = RadonOperator::from_geometry(&Geometry::sparse(n, views)).unwrap();
        let norm_sq = op.estimate_operator_norm(200, 1);
        let s = 1.0 / norm_sq;
        let y = Sinogram::from_vec(views, n, uniform(views * n, seed, 4)).unwrap();
        let x1 = Image::from_vec(n, uniform(n * n, seed, 5)).unwrap();
        let x2 = Image::from_vec(n, uniform(n * n, seed, 6)).unwrap();
        let g1 = op.gradient_map(&x1, &y, s).unwrap();
        let g2 = op.gradient_map(&x2, &y, s).unwrap();
        let d_out = hydra_core::linalg::dist(g1.data(), g2.data());
        let d_in = hydra_core::linalg::dist(x1.data(), x2.data());
        prop_assert!(d_out <= (1.0 + 1e-6) * d_in, "{d_out} > {d_in}");
    }

    #[test]
    fn mask_projection_is_idempotent(seed in 0u64..1000, views in 1usize..=48) {
        let g = Geometry { n_angles_full: 48, ..Geometry::sparse(8, views) };
        let op = RadonOperator::from_geometry(&g).unwrap();
        let s = Sinogram::from_vec(48, 8, uniform(48 * 8, seed, 7)).unwrap();
        let once = op.zero_unretained(&s).unwrap();
        prop_assert_eq!(op.zero_unretained(&once).unwrap(), once);
    }
}
