//! Independent oracles shared by the suites and the acceptance target.
#![allow(dead_code)]

use hydra_core::denoiser::{DenoiserConfig, DenoiserNet, Omega};
use hydra_core::layer::LayerConfig;
use hydra_core::linalg::{dot, norm, LinearMap};
use hydra_core::radon::{Geometry, RadonOperator};
use hydra_core::rng::{self, stream, Purpose};
use hydra_core::solver::EquilibriumConfig;
use hydra_core::training::{denoiser_noise, surrogate_loss, surrogate_loss_and_grad, LossConfig, LossContext, LossMode};
use hydra_core::{Image, Sinogram};
use rand::Rng;

/// Isotropic TV with forward differences, written out pixel by pixel.
pub fn naive_tv(x: &[f64], n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let here = x[i * n + j];
            let dr = if i + 1 < n { x[(i + 1) * n + j] - here } else { 0.0 };
            let dc = if j + 1 < n { x[i * n + j + 1] - here } else { 0.0 };
            total += (dr * dr + dc * dc).sqrt();
        }
    }
    total
}

/// One subgradient of [`naive_tv`]; zero-gradient pixels contribute zero.
pub fn naive_tv_subgradient(x: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let dr = if i + 1 < n { x[k + n] - x[k] } else { 0.0 };
            let dc = if j + 1 < n { x[k + 1] - x[k] } else { 0.0 };
            let m = (dr * dr + dc * dc).sqrt();
            if m == 0.0 {
                continue;
            }
            if i + 1 < n {
                g[k + n] += dr / m;
                g[k] -= dr / m;
            }
            if j + 1 < n {
                g[k + 1] += dc / m;
                g[k] -= dc / m;
            }
        }
    }
    g
}

/// `argmin ½‖x − v‖² + w·TV(x)` by subgradient descent on the 1-strongly
/// convex objective, step `2/(k+2)` and `k`-weighted averaging.
pub fn subgradient_prox(v: &[f64], n: usize, w: f64, iters: usize) -> Vec<f64> {
    let mut x = v.to_vec();
    let mut avg = vec![0.0; n * n];
    let mut weight_sum = 0.0;
    for k in 0..iters {
        let g = naive_tv_subgradient(&x, n);
        let step = 2.0 / (k as f64 + 2.0);
        for p in 0..n * n {
            x[p] -= step * (x[p] - v[p] + w * g[p]);
        }
        let wk = k as f64 + 1.0;
        weight_sum += wk;
        for p in 0..n * n {
            avg[p] += wk * (x[p] - avg[p]) / weight_sum;
        }
    }
    avg
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// `|⟨Ax,u⟩ − ⟨x,Aᵀu⟩| / (‖Ax‖‖u‖)` in double precision.
pub fn dot_gap(op: &RadonOperator, x: &[f64], u: &[f64]) -> f64 {
    let ax = op.apply(x);
    let atu = op.apply_transpose(u);
    (dot(&ax, u) - dot(x, &atu)).abs() / (norm(&ax) * norm(u))
}

/// Same gap with inputs, operator outputs and inner products all rounded to
/// single precision.
pub fn dot_gap_f32(op: &RadonOperator, x: &[f64], u: &[f64]) -> f64 {
    let x32 = to_f32(x);
    let u32 = to_f32(u);
    let xr: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
    let ur: Vec<f64> = u32.iter().map(|&v| v as f64).collect();
    let ax = to_f32(&op.apply(&xr));
    let atu = to_f32(&op.apply_transpose(&ur));
    let lhs = dot_f32(&ax, &u32);
    let rhs = dot_f32(&x32, &atu);
    let denom = dot_f32(&ax, &ax).sqrt() * dot_f32(&u32, &u32).sqrt();
    ((lhs - rhs).abs() / denom) as f64
}

/// `x ↦ c·Qx + b` with `Q` a fixed rotation-and-reflection mix, so the
/// contraction factor is exactly `c`.
pub fn linear_contraction(dim: usize, c: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    let mut rng = stream(4, Purpose::Test, 0);
    let angles: Vec<f64> = (0..dim / 2).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    move |x: &[f64]| {
        let mut out = b.clone();
        for (k, &t) in angles.iter().enumerate() {
            let (s, co) = t.sin_cos();
            let (u, v) = (x[2 * k], x[2 * k + 1]);
            out[2 * k] += c * (co * u - s * v);
            out[2 * k + 1] += c * (s * u + co * v);
        }
        out
    }
}

/// SSIM straight from the definition: for every valid window position, the
/// Gaussian-weighted moments are accumulated over the 2-D window directly.
pub fn naive_ssim(a: &Image, b: &Image, window: usize, sigma: f64) -> f64 {
    let n = a.size();
    let c = (window as f64 - 1.0) / 2.0;
    let mut weights = vec![vec![0.0; window]; window];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *w = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let m = n - window + 1;
    let mut sum = 0.0;
    for r in 0..m {
        for s in 0..m {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let w = weights[i][j] / total;
                    ma += w * a.get(r + i, s + j);
                    mb += w * b.get(r + i, s + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let w = weights[i][j] / total;
                    let (da, db) = (a.get(r + i, s + j) - ma, b.get(r + i, s + j) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    sum / (m * m) as f64
}

pub fn jfb_setup(omega: Omega, mode: LossMode) -> (RadonOperator, DenoiserNet, LayerConfig, LossConfig, Sinogram, Image, Vec<f64>) {
    let n = 8;
    let mut op = RadonOperator::from_geometry(&Geometry::sparse(n, 6)).unwrap();
    op.estimate_operator_norm(200, 0);
    let net = DenoiserNet::new(&DenoiserConfig {
        channels: vec![1, 3, 3, 1],
        spectral_size: n,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let mut rng = rng::stream(5, Purpose::Test, 0);
    let truth = Image::from_fn(n, |_, _| rng.random::<f64>());
    let y = op.forward(&truth).unwrap();
    let x_star = Image::from_fn(n, |_, _| 0.1 + 0.8 * rng.random::<f64>());
    let layer = LayerConfig {
        omega,
        ..Default::default()
    };
    let loss = LossConfig {
        mode,
        tv_alpha: 0.05,
        ..Default::default()
    };
    let eps = denoiser_noise(3, 1, n * n, loss.noise_sigma);
    (op, net, layer, loss, y, x_star, eps)
}

/// `‖∇surrogate − FD‖ / ‖FD‖` on an 8² problem, central differences with
/// step 1e-6.
pub fn jfb_relative_error(omega: Omega, mode: LossMode) -> f64 {
    let (op, net, layer, loss, y, x_star, eps) = jfb_setup(omega, mode);
    let ctx = LossContext {
        op: &op,
        layer,
        equilibrium: EquilibriumConfig::default(),
        loss,
    };
    let (_, grad) = surrogate_loss_and_grad(&net, &ctx, &y, &x_star, &eps).unwrap();
    let p0 = net.params();
    let h = 1e-6;
    let mut fd = vec![0.0; p0.len()];
    for i in 0..p0.len() {
        let mut plus = net.clone();
        let mut q = p0.clone();
        q[i] += h;
        plus.set_params(&q).unwrap();
        let mut minus = net.clone();
        q[i] -= 2.0 * h;
        minus.set_params(&q).unwrap();
        let lp = surrogate_loss(&plus, &ctx, &y, &x_star, &eps).unwrap().total();
        let lm = surrogate_loss(&minus, &ctx, &y, &x_star, &eps).unwrap().total();
        fd[i] = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(scale > 0.0);
    diff / scale
}

