//! Picard and Anderson fixed-point solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::fbp::{fbp, FbpConfig};
use crate::layer::EquilibriumLayer;
use crate::linalg::{all_finite, dist, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Picard,
    #[default]
    Anderson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Zero,
    Fbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    /// Relative-residual threshold.
    pub tol: f64,
    pub max_iters: usize,
    pub method: SolverMethod,
    pub anderson_memory: usize,
    /// Tikhonov weight relative to the squared norm of the newest residual.
    pub anderson_ridge: f64,
    /// `β`: weight of mapped values against iterates in the mixed update.
    pub anderson_relaxation: f64,
    pub init: InitKind,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iters: 50,
            method: SolverMethod::Anderson,
            anderson_memory: 5,
            anderson_ridge: 1e-4,
            anderson_relaxation: 1.0,
            init: InitKind::Zero,
        }
    }
}

impl EquilibriumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.anderson_memory == 0 {
            return Err(Error::Config("anderson_memory must be at least 1".into()));
        }
        if !(self.anderson_ridge >= 0.0) {
            return Err(Error::Config("anderson_ridge must be nonnegative".into()));
        }
        if !(self.anderson_relaxation > 0.0 && self.anderson_relaxation <= 1.0) {
            return Err(Error::Config("anderson_relaxation must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Relative residual `‖f(x_k) − x_k‖ / max(‖x_k‖, ε)` per iteration.
    pub history: Vec<f64>,
    /// Anderson steps replaced by a Picard step.
    pub fallbacks: usize,
}

/// Past iterates `x_i` and their images `f(x_i)`.
#[derive(Debug, Clone, Default)]
pub struct AndersonHistory {
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl AndersonHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<f64>, fx: Vec<f64>, memory: usize) {
        self.xs.push(x);
        self.fs.push(fx);
        while self.xs.len() > memory.max(1) {
            self.xs.remove(0);
            self.fs.remove(0);
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn clear(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }
}

/// Mixing coefficients minimising `‖Σ αᵢ gᵢ‖² + ridge·‖g_k‖²·‖α‖²` subject
/// to `Σ αᵢ = 1`, with `gᵢ = f(xᵢ) − xᵢ` and `g_k` the newest residual.
/// Returns `None` if the reduced system cannot be solved.
pub fn anderson_coefficients(hist: &AndersonHistory, ridge: f64) -> Option<Vec<f64>> {
    let m = hist.len();
    if m == 0 {
        return None;
    }
    let g: Vec<Vec<f64>> = hist
        .xs
        .iter()
        .zip(&hist.fs)
        .map(|(x, f)| f.iter().zip(x).map(|(a, b)| a - b).collect())
        .collect();
    let mut h = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = dot(&g[i], &g[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let newest = h[(m - 1, m - 1)];
    let reg = if newest > 0.0 { ridge * newest } else { 1.0 };
    for i in 0..m {
        h[(i, i)] += reg;
    }
    let z = h.lu().solve(&DVector::from_element(m, 1.0))?;
    let s: f64 = z.iter().sum();
    if !s.is_finite() || s.abs() < f64::MIN_POSITIVE {
        return None;
    }
    Some(z.iter().map(|v| v / s).collect())
}

/// `β Σ αᵢ f(xᵢ) + (1−β) Σ αᵢ xᵢ`; a single history entry gives the Picard
/// step `β f(x) + (1−β) x`.
pub fn anderson_step(hist: &AndersonHistory, ridge: f64, beta: f64) -> Result<Vec<f64>> {
    let alpha = anderson_coefficients(hist, ridge)
        .ok_or_else(|| Error::Domain("Anderson coefficient solve failed".into()))?;
    Ok(mix(hist, &alpha, beta))
}

fn mix(hist: &AndersonHistory, alpha: &[f64], beta: f64) -> Vec<f64> {
    let n = hist.xs[0].len();
    let mut out = vec![0.0; n];
    for ((x, f), &a) in hist.xs.iter().zip(&hist.fs).zip(alpha) {
        for ((o, xi), fi) in out.iter_mut().zip(x).zip(f) {
            *o += a * (beta * fi + (1.0 - beta) * xi);
        }
    }
    out
}

fn relative_residual(x: &[f64], fx: &[f64]) -> f64 {
    dist(fx, x) / norm(x).max(f64::EPSILON)
}

/// Solves `x = f(x)` from `x0`. On exit the returned `x` satisfies
/// `‖f(x) − x‖ / max(‖x‖, ε) ≤ tol` unless `converged` is false.
pub fn solve_fixed_point<F>(mut f: F, x0: Vec<f64>, cfg: &EquilibriumConfig) -> Result<(Vec<f64>, SolveReport)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut hist = AndersonHistory::new();
    let mut fallbacks = 0;
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut prev: Option<(Vec<f64>, f64)> = None;
    loop {
        let k = history.len();
        if !all_finite(&fx) || !all_finite(&x) {
            return Err(Error::Divergence { iteration: k });
        }
        let mut res = relative_residual(&x, &fx);
        if let Some((pfx, pres)) = prev.take() {
            if cfg.method == SolverMethod::Anderson && res > 10.0 * pres && hist.len() > 1 {
                fallbacks += 1;
                hist.clear();
                x = pfx;
                fx = f(&x)?;
                if !all_finite(&fx) {
                    return Err(Error::Divergence { iteration: k });
                }
                res = relative_residual(&x, &fx);
            }
        }
        history.push(res);
        if res <= cfg.tol || history.len() >= cfg.max_iters {
            let converged = res <= cfg.tol;
            return Ok((
                x,
                SolveReport {
                    iterations: history.len(),
                    residual: res,
                    converged,
                    history,
                    fallbacks,
                },
            ));
        }
        let next = match cfg.method {
            SolverMethod::Picard => fx.clone(),
            SolverMethod::Anderson => {
                hist.push(x.clone(), fx.clone(), cfg.anderson_memory);
                match anderson_coefficients(&hist, cfg.anderson_ridge) {
                    Some(alpha) => mix(&hist, &alpha, cfg.anderson_relaxation),
                    None => {
                        hist.clear();
                        fx.clone()
                    }
                }
            }
        };
        x = next;
        prev = Some((fx, res));
        fx = f(&x)?;
    }
}

/// Solves the equilibrium equation `x = 𝒩_θ(𝒢(x, y))`.
pub fn solve_layer(
    layer: &EquilibriumLayer<'_>,
    y: &Sinogram,
    cfg: &EquilibriumConfig,
) -> Result<(Image, SolveReport)> {
    let n = layer.op.image_size();
    let x0 = match cfg.init {
        InitKind::Zero => Image::zeros(n),
        InitKind::Fbp => fbp(layer.op, y, &FbpConfig::default())?,
    };
    solve_layer_from(layer, y, cfg, x0)
}

pub fn solve_layer_from(
    layer: &EquilibriumLayer<'_>,
    y: &Sinogram,
    cfg: &EquilibriumConfig,
    x0: Image,
) -> Result<(Image, SolveReport)> {
    let n = layer.op.image_size();
    x0.check_size(n)?;
    let (x, report) = solve_fixed_point(
        |v| {
            let img = Image::from_vec(n, v.to_vec())?;
            Ok(layer.apply(&img, y)?.into_vec())
        },
        x0.into_vec(),
        cfg,
    )?;
    if !report.converged {
        log::debug!(
            "equilibrium solve stopped at {} iterations, residual {:.3e}",
            report.iterations,
            report.residual
        );
    }
    Ok((Image::from_vec(n, x)?, report))
}
