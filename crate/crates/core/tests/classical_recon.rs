use hydra_core::array::{Image, Sinogram};
use hydra_core::dataset::DEFAULT_ATTENUATION_SCALE;
use hydra_core::fbp::{fbp, FbpConfig};
use hydra_core::linalg::{dist, dot, norm};
use hydra_core::metrics::psnr;
use hydra_core::noise::simulate_measurement;
use hydra_core::phantom::{gen_phantom, PhantomConfig};
use hydra_core::radon::{Geometry, RadonOperator};
use hydra_core::rng::{stream, Purpose};
use hydra_core::tv::{grid_search_alpha, pgd_from, pgd_reconstruct, tv_prox, tv_value, TvConfig, TvVariant, DEFAULT_ALPHA_GRID};
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::{naive_tv, subgradient_prox};

fn random_image(n: usize, seed: u64) -> Image {
    let mut rng = stream(seed, Purpose::Test, 100);
    Image::from_fn(n, |_, _| rng.random::<f64>())
}

fn op_with_norm(n: usize, views: usize) -> RadonOperator {
    let mut op = RadonOperator::from_geometry(&Geometry::sparse(n, views)).unwrap();
    op.estimate_operator_norm(100, 0);
    op
}

#[test]
fn tv_matches_naive_definition() {
    let x = random_image(12, 4);
    let a = tv_value(&x, TvVariant::Isotropic);
    assert!((a - naive_tv(x.data(), 12)).abs() < 1e-12 * a);
}

#[test]
fn prox_matches_subgradient_oracle() {
    let n = 8;
    let v = random_image(n, 1);
    let w = 0.05;
    let fast = tv_prox(&v, w, 20_000, TvVariant::Isotropic);
    let oracle = subgradient_prox(v.data(), n, w, 2_000_000);
    let gap = fast
        .data()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-3, "‖prox − oracle‖∞ = {gap:e}");
}

fn full_view_32() -> RadonOperator {
    let mut op = RadonOperator::from_geometry(&Geometry { n_views: 384, ..Geometry::sparse(32, 384) }).unwrap();
    op.estimate_operator_norm(100, 0);
    op
}

fn relative_residual(op: &RadonOperator, x: &Image, y: &Sinogram) -> f64 {
    let r = op.forward(x).unwrap();
    dist(r.data(), y.data()) / norm(y.data())
}

#[test]
fn pgd_reaches_least_squares_with_vanishing_alpha() {
    // Full-view noiseless data of a smooth object: the least-squares
    // solution reproduces y.
    let op = full_view_32();
    let blob = Image::from_fn(32, |i, j| {
        let (a, b) = (i as f64 - 15.5, j as f64 - 15.5);
        (-(a * a + b * b) / 60.0).exp()
    });
    let y = op.forward(&blob).unwrap();
    let cfg = TvConfig { alpha: 1e-12, pgd_iters: 500, ..Default::default() };
    let out = pgd_reconstruct(&op, &y, &cfg).unwrap();
    let rel = relative_residual(&op, &out.image, &y);
    assert!(rel < 1e-3, "relative residual {rel:e}");
    let oracle = cg_least_squares(&op, &y, 300);
    assert!(relative_residual(&op, &oracle, &y) < 1e-6);
}

#[test]
fn pgd_residual_keeps_falling_on_phantom_data() {
    // Sharp edges load the small singular values of the interpolating
    // projector, so convergence here is slow but steady.
    let op = full_view_32();
    let x_true = gen_phantom(&PhantomConfig { size: 32, seed: 2, ..Default::default() }, 0);
    let y = op.forward(&x_true).unwrap();
    let mut last = f64::INFINITY;
    for iters in [100, 500, 2000] {
        let cfg = TvConfig { alpha: 1e-12, pgd_iters: iters, ..Default::default() };
        let rel = relative_residual(&op, &pgd_reconstruct(&op, &y, &cfg).unwrap().image, &y);
        assert!(rel < last, "{iters} iterations: {rel:e} after {last:e}");
        last = rel;
    }
    let oracle = relative_residual(&op, &cg_least_squares(&op, &y, 1000), &y);
    assert!(oracle < last / 10.0, "cg {oracle:e} vs pgd {last:e}");
}

/// Conjugate gradients on `AᵀA x = Aᵀy`.
fn cg_least_squares(op: &RadonOperator, y: &Sinogram, iters: usize) -> Image {
    let n = op.image_size();
    let normal = |x: &[f64]| -> Vec<f64> {
        let ax = op.forward(&Image::from_vec(n, x.to_vec()).unwrap()).unwrap();
        op.adjoint(&ax).unwrap().into_vec()
    };
    let b = op.adjoint(y).unwrap().into_vec();
    let mut x = vec![0.0; n * n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr.sqrt() < 1e-14 * norm(&b) {
            break;
        }
        let ap = normal(&p);
        let a = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += a * p[k];
            r[k] -= a * ap[k];
        }
        let rr_new = dot(&r, &r);
        for k in 0..p.len() {
            p[k] = r[k] + rr_new / rr * p[k];
        }
        rr = rr_new;
    }
    Image::from_vec(n, x).unwrap()
}

#[test]
fn least_squares_point_is_a_pgd_fixed_point() {
    let n = 16;
    let op = op_with_norm(n, 384);
    let x_true = gen_phantom(&PhantomConfig { size: n, seed: 5, ..Default::default() }, 1);
    let y = op.forward(&x_true).unwrap();
    let x_ls = cg_least_squares(&op, &y, 400);
    let cfg = TvConfig { alpha: 1e-300, pgd_iters: 5, ..Default::default() };
    let out = pgd_from(&op, &y, &cfg, x_ls.clone()).unwrap();
    // The result is clamped, so compare against the clamped start.
    let moved = dist(out.image.data(), x_ls.clamp01().data());
    assert!(moved < 1e-6, "iterates moved {moved:e}");
}

#[test]
fn pgd_objective_is_non_increasing() {
    let n = 16;
    for seed in 0..10u64 {
        let views = [8, 16, 32][seed as usize % 3];
        let op = op_with_norm(n, views);
        let x_true = random_image(n, seed);
        let mut y = op.forward(&x_true).unwrap();
        let mut rng = stream(seed, Purpose::Test, 200);
        y.data_mut().iter_mut().for_each(|v| *v += 0.5 * (rng.random::<f64>() - 0.5));
        let alpha = [1e-3, 1e-2, 1e-1, 1.0][seed as usize % 4];
        let cfg = TvConfig { alpha, pgd_iters: 60, inner_iters: 100, ..Default::default() };
        let out = pgd_from(&op, &y, &cfg, Image::zeros(n)).unwrap();
        let f0 = out.objective[0];
        for (k, w) in out.objective.windows(2).enumerate() {
            // Slack for the inexact inner prox.
            assert!(w[1] <= w[0] + 1e-6 * f0, "problem {seed}, step {k}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn sixteen_view_tv_beats_fbp_on_every_test_phantom() {
    let n = 64;
    let op = op_with_norm(n, 16);
    let phantoms = PhantomConfig { size: n, seed: 21, ..Default::default() };
    let sample = |i: u64| {
        let p = gen_phantom(&phantoms, i);
        let (_, y) = simulate_measurement(&op, &p, 1000.0, DEFAULT_ATTENUATION_SCALE, i).unwrap();
        (p, y)
    };
    let (val_p, val_y): (Vec<_>, Vec<_>) = (0..4).map(sample).unzip();
    let search = grid_search_alpha(&op, &val_y, &val_p, &DEFAULT_ALPHA_GRID, &TvConfig::default()).unwrap();
    assert!(!search.at_endpoint, "selected alpha {} at grid edge: {:?}", search.best_alpha, search.scores);
    let cfg = TvConfig { alpha: search.best_alpha, ..Default::default() };
    let fbp_cfg = FbpConfig { clamp: true, ..Default::default() };
    for i in 100..110 {
        let (p, y) = sample(i);
        let tv = pgd_reconstruct(&op, &y, &cfg).unwrap();
        let f = fbp(&op, &y, &fbp_cfg).unwrap();
        let (a, b) = (psnr(&tv.image, &p, 1.0).unwrap(), psnr(&f, &p, 1.0).unwrap());
        assert!(a > b, "phantom {i}: tv {a:.2} dB, fbp {b:.2} dB");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prox_is_nonexpansive(seed in 0u64..10_000, w in 0.01f64..1.0, aniso in any::<bool>()) {
        let variant = if aniso { TvVariant::Anisotropic } else { TvVariant::Isotropic };
        let a = random_image(8, seed);
        let b = random_image(8, seed + 10_000);
        let pa = tv_prox(&a, w, 3000, variant);
        let pb = tv_prox(&b, w, 3000, variant);
        prop_assert!(dist(pa.data(), pb.data()) <= dist(a.data(), b.data()) * (1.0 + 1e-6));
    }

    #[test]
    fn tv_is_positively_homogeneous(seed in 0u64..10_000, c in 0.0f64..10.0) {
        let x = random_image(10, seed);
        let cx = Image::from_vec(10, x.data().iter().map(|v| c * v).collect()).unwrap();
        for variant in [TvVariant::Isotropic, TvVariant::Anisotropic] {
            let lhs = tv_value(&cx, variant);
            let rhs = c * tv_value(&x, variant);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn anisotropic_bounds_isotropic(seed in 0u64..10_000) {
        let x = random_image(10, seed);
        let iso = tv_value(&x, TvVariant::Isotropic);
        let aniso = tv_value(&x, TvVariant::Anisotropic);
        prop_assert!(aniso >= iso - 1e-12);
        prop_assert!(iso >= aniso / 2f64.sqrt() - 1e-12);
    }
}
