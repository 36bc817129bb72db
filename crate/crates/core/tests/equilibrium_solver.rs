use hydra_core::array::{Image, Sinogram};
use hydra_core::denoiser::{DenoiserConfig, DenoiserNet};
use hydra_core::layer::{EquilibriumLayer, LayerConfig};
use hydra_core::linalg::{dist, norm};
use hydra_core::phantom::{gen_phantom, PhantomConfig};
use hydra_core::radon::{Geometry, RadonOperator};
use hydra_core::rng::{stream, Purpose};
use hydra_core::solver::{
    anderson_coefficients, solve_fixed_point, solve_layer, AndersonHistory, EquilibriumConfig, InitKind,
    SolverMethod,
};
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::linear_contraction;

fn setup(n: usize, views: usize, seed: u64) -> (RadonOperator, DenoiserNet, Sinogram) {
    let mut op = RadonOperator::from_geometry(&Geometry::sparse(n, views)).unwrap();
    op.estimate_operator_norm(100, 0);
    let net = DenoiserNet::new(&DenoiserConfig {
        channels: vec![1, 8, 8, 1],
        skip_gain: 0.5,
        spectral_size: n,
        seed,
        ..Default::default()
    })
    .unwrap();
    let p = gen_phantom(&PhantomConfig { size: n, seed, ..Default::default() }, 0);
    let y = op.forward(&p).unwrap();
    (op, net, y)
}

#[test]
fn equilibrium_does_not_depend_on_initialisation() {
    let (op, net, y) = setup(16, 16, 1);
    let layer = EquilibriumLayer::new(&op, &net, LayerConfig::default()).unwrap();
    let zero = EquilibriumConfig { init: InitKind::Zero, ..Default::default() };
    let fbp = EquilibriumConfig { init: InitKind::Fbp, ..Default::default() };
    let (x1, r1) = solve_layer(&layer, &y, &zero).unwrap();
    let (x2, r2) = solve_layer(&layer, &y, &fbp).unwrap();
    assert!(r1.converged && r2.converged);
    let gap = dist(x1.data(), x2.data());
    assert!(gap <= 5.0 * zero.tol * norm(x1.data()), "gap {gap}");
}

#[test]
fn exit_point_satisfies_the_defining_equation() {
    let (op, net, y) = setup(16, 16, 2);
    let layer = EquilibriumLayer::new(&op, &net, LayerConfig::default()).unwrap();
    let cfg = EquilibriumConfig::default();
    let (x, report) = solve_layer(&layer, &y, &cfg).unwrap();
    assert!(report.converged);
    assert_eq!(report.history.len(), report.iterations);
    let fx = layer.apply(&x, &y).unwrap();
    assert!(dist(fx.data(), x.data()) / norm(x.data()) <= cfg.tol);
}

#[test]
fn solves_are_bit_identical() {
    let (op, net, y) = setup(16, 8, 3);
    let layer = EquilibriumLayer::new(&op, &net, LayerConfig::default()).unwrap();
    let cfg = EquilibriumConfig::default();
    let (a, ra) = solve_layer(&layer, &y, &cfg).unwrap();
    let (b, rb) = solve_layer(&layer, &y, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn anderson_beats_picard_on_a_slow_contraction() {
    let dim = 40;
    let f = linear_contraction(dim, 0.95);
    let base = EquilibriumConfig { tol: 1e-8, max_iters: 2000, ..Default::default() };
    let picard = EquilibriumConfig { method: SolverMethod::Picard, ..base };
    let (_, rp) = solve_fixed_point(|x| Ok(f(x)), vec![0.0; dim], &picard).unwrap();
    let (_, ra) = solve_fixed_point(|x| Ok(f(x)), vec![0.0; dim], &base).unwrap();
    assert!(rp.converged && ra.converged);
    assert!(ra.iterations < rp.iterations, "anderson {} vs picard {}", ra.iterations, rp.iterations);
}

#[test]
fn anderson_no_slower_on_a_real_layer() {
    let (op, net, y) = setup(16, 16, 5);
    let layer = EquilibriumLayer::new(&op, &net, LayerConfig::default()).unwrap();
    let base = EquilibriumConfig { max_iters: 500, ..Default::default() };
    let picard = EquilibriumConfig { method: SolverMethod::Picard, ..base };
    let (_, ra) = solve_layer(&layer, &y, &base).unwrap();
    let (_, rp) = solve_layer(&layer, &y, &picard).unwrap();
    assert!(ra.converged && rp.converged);
    assert!(ra.iterations <= rp.iterations, "anderson {} vs picard {}", ra.iterations, rp.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn picard_steps_shrink_by_the_contraction_factor(seed in 0u64..1000, lambda in 0.1f64..0.9) {
        let (op, net, y) = setup(12, 8, seed);
        let cfg = LayerConfig { lambda_mix: lambda, ..Default::default() };
        let layer = EquilibriumLayer::new(&op, &net, cfg).unwrap();
        let c = cfg.contraction_bound(net.lipschitz_budget());
        let mut x = Image::zeros(12);
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            let next = layer.apply(&x, &y).unwrap();
            let step = dist(next.data(), x.data());
            prop_assert!(step <= c * prev + 1e-12, "{step} > {c}·{prev}");
            prev = step;
            x = next;
        }
    }

    #[test]
    fn mixing_coefficients_sum_to_one(seed in 0u64..1000, len in 1usize..6) {
        let mut rng = stream(seed, Purpose::Test, 1);
        let mut hist = AndersonHistory::new();
        for _ in 0..len {
            let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let fx: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            hist.push(x, fx, 5);
        }
        let alpha = anderson_coefficients(&hist, 1e-4).unwrap();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}
