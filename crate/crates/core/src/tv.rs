//! Total variation, its proximal map, and the TV-regularised
//! proximal-gradient reconstruction.

use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::fbp::{fbp, FbpConfig};
use crate::linalg::norm_sq;
use crate::metrics::psnr;
use crate::par;
use crate::radon::RadonOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvVariant {
    #[default]
    Isotropic,
    Anisotropic,
}

/// Forward differences with Neumann boundary: `(∂_row x, ∂_col x)`.
pub fn gradient(x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gr = vec![0.0; n * n];
    let mut gc = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if i + 1 < n {
                gr[k] = x[k + n] - x[k];
            }
            if j + 1 < n {
                gc[k] = x[k + 1] - x[k];
            }
        }
    }
    (gr, gc)
}

/// Discrete divergence, the negative adjoint of [`gradient`].
pub fn divergence(pr: &[f64], pc: &[f64], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let mut v = 0.0;
            if i + 1 < n {
                v += pr[k];
            }
            if i > 0 {
                v -= pr[k - n];
            }
            if j + 1 < n {
                v += pc[k];
            }
            if j > 0 {
                v -= pc[k - 1];
            }
            d[k] = v;
        }
    }
    d
}

pub fn tv_value(x: &Image, variant: TvVariant) -> f64 {
    let (gr, gc) = gradient(x.data(), x.size());
    match variant {
        TvVariant::Isotropic => gr.iter().zip(&gc).map(|(a, b)| a.hypot(*b)).sum(),
        TvVariant::Anisotropic => gr.iter().zip(&gc).map(|(a, b)| a.abs() + b.abs()).sum(),
    }
}

/// A (smoothed) subgradient of TV at `x`; `eps` rounds off the isotropic
/// kink at zero gradient.
pub fn tv_subgradient(x: &Image, variant: TvVariant, eps: f64) -> Vec<f64> {
    let n = x.size();
    let (gr, gc) = gradient(x.data(), n);
    let (pr, pc): (Vec<f64>, Vec<f64>) = match variant {
        TvVariant::Isotropic => gr
            .iter()
            .zip(&gc)
            .map(|(a, b)| {
                let m = (a * a + b * b + eps * eps).sqrt();
                (a / m, b / m)
            })
            .unzip(),
        TvVariant::Anisotropic => gr
            .iter()
            .zip(&gc)
            .map(|(a, b)| (a.signum() * (a.abs() > 0.0) as u8 as f64, b.signum() * (b.abs() > 0.0) as u8 as f64))
            .unzip(),
    };
    // ∂TV = ∇ᵀp = −div p
    divergence(&pr, &pc, n).into_iter().map(|v| -v).collect()
}

/// Dual variable of the TV proximal problem, kept between calls for warm
/// starts.
#[derive(Debug, Clone)]
pub struct TvDual {
    pr: Vec<f64>,
    pc: Vec<f64>,
}

impl TvDual {
    pub fn zeros(n: usize) -> Self {
        Self {
            pr: vec![0.0; n * n],
            pc: vec![0.0; n * n],
        }
    }
}

/// `argmin_x ½‖x − v‖² + weight·TV(x)` by Chambolle's projected dual
/// iteration.
pub fn tv_prox(v: &Image, weight: f64, inner_iters: usize, variant: TvVariant) -> Image {
    let mut dual = TvDual::zeros(v.size());
    tv_prox_warm(v, weight, inner_iters, variant, &mut dual)
}

pub fn tv_prox_warm(
    v: &Image,
    weight: f64,
    inner_iters: usize,
    variant: TvVariant,
    dual: &mut TvDual,
) -> Image {
    if weight <= 0.0 {
        return v.clone();
    }
    let n = v.size();
    // Dual step below 1/‖∇‖² = 1/8.
    const TAU: f64 = 0.124;
    let inv_w = 1.0 / weight;
    for _ in 0..inner_iters {
        let d = divergence(&dual.pr, &dual.pc, n);
        let z: Vec<f64> = d.iter().zip(v.data()).map(|(di, vi)| di - vi * inv_w).collect();
        let (gr, gc) = gradient(&z, n);
        for k in 0..n * n {
            let a = dual.pr[k] + TAU * gr[k];
            let b = dual.pc[k] + TAU * gc[k];
            match variant {
                TvVariant::Isotropic => {
                    let m = a.hypot(b).max(1.0);
                    dual.pr[k] = a / m;
                    dual.pc[k] = b / m;
                }
                TvVariant::Anisotropic => {
                    dual.pr[k] = a.clamp(-1.0, 1.0);
                    dual.pc[k] = b.clamp(-1.0, 1.0);
                }
            }
        }
    }
    let d = divergence(&dual.pr, &dual.pc, n);
    let data = v
        .data()
        .iter()
        .zip(&d)
        .map(|(vi, di)| vi - weight * di)
        .collect();
    Image::from_vec(n, data).expect("same size as input")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    pub alpha: f64,
    pub variant: TvVariant,
    pub inner_iters: usize,
    pub pgd_iters: usize,
    /// Gradient step as a fraction of `1/‖A‖²`, in `(0, 1]`.
    pub step_scale: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            variant: TvVariant::Isotropic,
            inner_iters: 20,
            pgd_iters: 300,
            step_scale: 0.95,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("tv alpha must be positive, got {}", self.alpha)));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::Config(format!(
                "step_scale must lie in (0, 1], got {}",
                self.step_scale
            )));
        }
        Ok(())
    }
}

/// `‖Ax − y‖² + α·TV(x)`
pub fn tv_objective(op: &RadonOperator, x: &Image, y: &Sinogram, alpha: f64, variant: TvVariant) -> Result<f64> {
    let ax = op.forward(x)?;
    let r: Vec<f64> = ax.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
    Ok(norm_sq(&r) + alpha * tv_value(x, variant))
}

#[derive(Debug, Clone)]
pub struct PgdResult {
    /// Final iterate clamped to `[0, 1]`.
    pub image: Image,
    /// Objective of each unclamped iterate, starting with the initial one.
    pub objective: Vec<f64>,
}

/// Proximal gradient `x ← prox_{sα·TV}(x − 2s·Aᵀ(Ax − y))` from the FBP
/// initialisation.
pub fn pgd_reconstruct(op: &RadonOperator, y: &Sinogram, cfg: &TvConfig) -> Result<PgdResult> {
    let x0 = fbp(op, y, &FbpConfig::default())?;
    pgd_from(op, y, cfg, x0)
}

pub fn pgd_from(op: &RadonOperator, y: &Sinogram, cfg: &TvConfig, x0: Image) -> Result<PgdResult> {
    cfg.validate()?;
    let s = cfg.step_scale / op.require_norm_sq()?;
    let mut x = x0;
    let mut dual = TvDual::zeros(op.image_size());
    let mut objective = Vec::with_capacity(cfg.pgd_iters + 1);
    objective.push(tv_objective(op, &x, y, cfg.alpha, cfg.variant)?);
    for _ in 0..cfg.pgd_iters {
        let v = op.gradient_map(&x, y, s)?;
        x = tv_prox_warm(&v, s * cfg.alpha, cfg.inner_iters, cfg.variant, &mut dual);
        objective.push(tv_objective(op, &x, y, cfg.alpha, cfg.variant)?);
    }
    Ok(PgdResult {
        image: x.clamp01(),
        objective,
    })
}

/// The four-point grid `{1e-4, 1e-3, 1e-2, 1e-1}`.
pub const DEFAULT_ALPHA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_alpha: f64,
    /// `(alpha, mean PSNR)` over the deduplicated, ascending grid.
    pub scores: Vec<(f64, f64)>,
    /// The winner is the smallest or largest grid value.
    pub at_endpoint: bool,
}

/// Picks the `alpha` with the best mean PSNR against `phantoms`; ties go to
/// the larger `alpha`.
pub fn grid_search_alpha(
    op: &RadonOperator,
    sinograms: &[Sinogram],
    phantoms: &[Image],
    grid: &[f64],
    base: &TvConfig,
) -> Result<GridSearch> {
    if sinograms.len() != phantoms.len() || sinograms.is_empty() {
        return Err(Error::Config(
            "grid search needs matching, non-empty sinogram and phantom sets".into(),
        ));
    }
    let mut alphas: Vec<f64> = grid.to_vec();
    alphas.sort_by(|a, b| a.partial_cmp(b).expect("grid values are comparable"));
    alphas.dedup();
    if alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..sinograms.len()).map(move |s| (a, s)))
        .collect();
    let results = par::map_slice(&jobs, |&(a, s)| -> Result<f64> {
        let cfg = TvConfig { alpha: alphas[a], ..*base };
        let rec = pgd_reconstruct(op, &sinograms[s], &cfg)?;
        psnr(&rec.image, &phantoms[s], 1.0)
    });
    let mut sums = vec![0.0; alphas.len()];
    for (&(a, _), r) in jobs.iter().zip(results) {
        sums[a] += r?;
    }
    let scores: Vec<(f64, f64)> = alphas
        .iter()
        .zip(&sums)
        .map(|(&a, &s)| (a, s / sinograms.len() as f64))
        .collect();
    let mut best = 0;
    for (i, &(_, score)) in scores.iter().enumerate() {
        if score >= scores[best].1 {
            best = i;
        }
    }
    let at_endpoint = alphas.len() > 1 && (best == 0 || best == alphas.len() - 1);
    if at_endpoint {
        log::warn!(
            "tv grid search picked endpoint alpha {} (scores {:?})",
            alphas[best],
            scores
        );
    }
    Ok(GridSearch {
        best_alpha: alphas[best],
        scores,
        at_endpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Image {
        let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Test, 0);
        Image::from_fn(n, |_, _| rng.random())
    }

    #[test]
    fn tv_of_constant_is_zero() {
        let x = Image::from_vec(5, vec![0.3; 25]).unwrap();
        assert_eq!(tv_value(&x, TvVariant::Isotropic), 0.0);
        assert_eq!(tv_value(&x, TvVariant::Anisotropic), 0.0);
    }

    #[test]
    fn hand_counted_anisotropic_tv() {
        let x = Image::from_vec(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_value(&x, TvVariant::Anisotropic), 2.0);
    }

    #[test]
    fn norm_equivalence_between_variants() {
        for seed in 0..10 {
            let x = random(12, seed);
            let a = tv_value(&x, TvVariant::Anisotropic);
            let i = tv_value(&x, TvVariant::Isotropic);
            assert!(a >= i && i >= a / 2f64.sqrt() - 1e-12);
        }
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        let n = 7;
        let x = random(n, 1);
        let pr = random(n, 2);
        let pc = random(n, 3);
        let (gr, gc) = gradient(x.data(), n);
        let lhs = dot(&gr, pr.data()) + dot(&gc, pc.data());
        let rhs = -dot(x.data(), &divergence(pr.data(), pc.data(), n));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn prox_with_zero_weight_is_identity() {
        let v = random(8, 4);
        assert_eq!(tv_prox(&v, 0.0, 20, TvVariant::Isotropic), v);
    }

    #[test]
    fn prox_keeps_constants() {
        let v = Image::from_vec(6, vec![0.7; 36]).unwrap();
        for w in [0.01, 0.5, 3.0] {
            let p = tv_prox(&v, w, 50, TvVariant::Isotropic);
            assert!(p.data().iter().all(|x| (x - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let op = RadonOperator::new(8, crate::radon::equispaced_angles(4), 8, 1.0).unwrap();
        let r = grid_search_alpha(&op, &[Sinogram::zeros(4, 8)], &[Image::zeros(8)], &[], &TvConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn pgd_needs_norm() {
        let op = RadonOperator::new(8, crate::radon::equispaced_angles(4), 8, 1.0).unwrap();
        let r = pgd_reconstruct(&op, &Sinogram::zeros(4, 8), &TvConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
