//! Self-supervised training of the equilibrium model.
//!
//! Gradients are Jacobian-free: the fixed point `x*` is found without
//! tracking derivatives and the loss is differentiated through a single
//! application of the layer (data term) or of the denoiser alone
//! (denoising term), with `x*` held constant.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::checkpoint::{self, Checkpoint, CheckpointIndex, TrainerState};
use crate::dataset::Dataset;
use crate::denoiser::{DenoiserConfig, DenoiserNet};
use crate::error::{Error, Result};
use crate::layer::{EquilibriumLayer, LayerConfig};
use crate::linalg::{all_finite, norm_sq};
use crate::metrics::psnr;
use crate::par;
use crate::radon::RadonOperator;
use crate::rng::{self, Purpose};
use crate::solver::{solve_layer, EquilibriumConfig};
use crate::tv::{tv_subgradient, tv_value, TvVariant};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,loss_dc,loss_reg,stop_metric_db,wallclock_s";

/// Smoothing of the TV kink in the DEQ-TV gradient.
const TV_GRAD_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Hydra,
    Plain,
    Tv,
}

impl LossMode {
    pub fn label(self) -> &'static str {
        match self {
            LossMode::Hydra => "hydra",
            LossMode::Plain => "plain",
            LossMode::Tv => "tv",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hydra" => Ok(LossMode::Hydra),
            "plain" => Ok(LossMode::Plain),
            "tv" => Ok(LossMode::Tv),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the denoising term; `None` means `‖𝒜‖²`.
    pub gamma: Option<f64>,
    /// Standard deviation of the denoiser training noise, as a fraction of
    /// the unit dynamic range.
    pub noise_sigma: f64,
    pub mode: LossMode,
    pub tv_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            noise_sigma: 0.15,
            mode: LossMode::Hydra,
            tv_alpha: 1e-2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return Err(Error::Config("gamma must be nonnegative".into()));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if !(self.tv_alpha >= 0.0) {
            return Err(Error::Config("tv_alpha must be nonnegative".into()));
        }
        Ok(())
    }

    /// Effective `γ`; zero unless the mode is `hydra`.
    pub fn effective_gamma(&self, op: &RadonOperator) -> Result<f64> {
        match self.mode {
            LossMode::Hydra => match self.gamma {
                Some(g) => Ok(g),
                None => op.require_norm_sq(),
            },
            _ => Ok(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingConfig {
    pub eval_every: u64,
    /// Evaluations without improvement before halting.
    pub patience: usize,
    /// Number of validation measurements used; 0 means all.
    pub val_subset_size: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            eval_every: 1000,
            patience: 10,
            val_subset_size: 0,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 1,
            max_steps: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Config("only batch_size 1 is supported".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam parameters out of range".into()));
        }
        Ok(())
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub denoiser: DenoiserConfig,
    pub layer: LayerConfig,
    pub equilibrium: EquilibriumConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub stopping: StoppingConfig,
    /// Power-iteration steps for `‖𝒜‖²`.
    pub norm_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            denoiser: DenoiserConfig::default(),
            layer: LayerConfig::default(),
            equilibrium: EquilibriumConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            stopping: StoppingConfig::default(),
            norm_iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.layer.validate()?;
        self.equilibrium.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.stopping.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub dc: f64,
    pub reg: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.dc + self.reg
    }
}

/// Everything a gradient evaluation needs apart from the network.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub op: &'a RadonOperator,
    pub layer: LayerConfig,
    pub equilibrium: EquilibriumConfig,
    pub loss: LossConfig,
}

/// Loss of the one-step surrogate at a detached fixed point `x_star` with a
/// fixed noise draw `eps` (ignored unless the mode is `hydra`).
pub fn surrogate_loss(
    net: &DenoiserNet,
    ctx: &LossContext<'_>,
    y: &Sinogram,
    x_star: &Image,
    eps: &[f64],
) -> Result<LossParts> {
    Ok(surrogate(net, ctx, y, x_star, eps, false)?.0)
}

/// Loss and parameter gradient of the one-step surrogate.
pub fn surrogate_loss_and_grad(
    net: &DenoiserNet,
    ctx: &LossContext<'_>,
    y: &Sinogram,
    x_star: &Image,
    eps: &[f64],
) -> Result<(LossParts, Vec<f64>)> {
    let (parts, g) = surrogate(net, ctx, y, x_star, eps, true)?;
    Ok((parts, g.expect("gradient requested")))
}

fn surrogate(
    net: &DenoiserNet,
    ctx: &LossContext<'_>,
    y: &Sinogram,
    x_star: &Image,
    eps: &[f64],
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    let layer = EquilibriumLayer::new(ctx.op, net, ctx.layer)?;
    let n = x_star.size();
    let tr = layer.trace(x_star, y)?;
    let ax = ctx.op.forward(&tr.out)?;
    let r: Vec<f64> = ax.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
    let dc = norm_sq(&r);
    let mut reg = 0.0;

    let mut cot_out: Option<Vec<f64>> = None;
    if want_grad {
        let rs = Sinogram::from_vec(ax.n_angles(), ax.n_detectors(), r)?;
        cot_out = Some(ctx.op.adjoint(&rs)?.into_vec().into_iter().map(|v| 2.0 * v).collect());
    }
    if ctx.loss.mode == LossMode::Tv {
        reg = ctx.loss.tv_alpha * tv_value(&tr.out, TvVariant::Isotropic);
        if let Some(c) = cot_out.as_mut() {
            let sg = tv_subgradient(&tr.out, TvVariant::Isotropic, TV_GRAD_EPS);
            c.iter_mut().zip(sg).for_each(|(ci, s)| *ci += ctx.loss.tv_alpha * s);
        }
    }

    let mut grad = None;
    if let Some(c) = cot_out {
        let lam = ctx.layer.lambda_mix;
        let cot_d: Vec<f64> = c
            .iter()
            .zip(tr.u.data())
            .map(|(ci, &u)| lam * ctx.layer.omega.derivative(u) * ci)
            .collect();
        let (g, _) = net.vjp(&tr.v, &Image::from_vec(n, cot_d)?)?;
        grad = Some(g);
    }

    let gamma = ctx.loss.effective_gamma(ctx.op)?;
    if ctx.loss.mode == LossMode::Hydra {
        if eps.len() != x_star.len() {
            return Err(Error::Dimension("noise draw length differs from image".into()));
        }
        let w = Image::from_vec(
            n,
            x_star.data().iter().zip(eps).map(|(a, b)| a + b).collect(),
        )?;
        let d = net.forward(&w);
        let e: Vec<f64> = d.data().iter().zip(x_star.data()).map(|(a, b)| a - b).collect();
        reg = gamma * norm_sq(&e);
        if let Some(g) = grad.as_mut() {
            if gamma != 0.0 {
                let cot = Image::from_vec(n, e.iter().map(|v| 2.0 * v).collect())?;
                let (gr, _) = net.vjp(&w, &cot)?;
                g.iter_mut().zip(gr).for_each(|(a, b)| *a += gamma * b);
            }
        }
    }
    Ok((LossParts { dc, reg }, grad))
}

/// Per-pixel Gaussian draw for step `step`.
pub fn denoiser_noise(seed: u64, step: u64, len: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = rng::stream(seed, Purpose::DenoiseNoise, step);
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// Solves for `x*` and returns the surrogate loss and its gradient.
pub fn hybrid_loss_and_grad(
    net: &DenoiserNet,
    ctx: &LossContext<'_>,
    y: &Sinogram,
    eps: &[f64],
) -> Result<(LossParts, Vec<f64>, Image)> {
    let layer = EquilibriumLayer::new(ctx.op, net, ctx.layer)?;
    let (x_star, _) = solve_layer(&layer, y, &ctx.equilibrium)?;
    let (parts, grad) = surrogate_loss_and_grad(net, ctx, y, &x_star, eps)?;
    Ok((parts, grad, x_star))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update on `params`.
pub fn adam_update(params: &mut [f64], state: &mut AdamState, grad: &[f64], cfg: &OptimConfig) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::Dimension("Adam state, parameters and gradient differ in length".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam on the network parameters followed by spectral normalisation.
pub fn adam_step(net: &mut DenoiserNet, state: &mut AdamState, grad: &[f64], cfg: &OptimConfig) -> Result<()> {
    let mut p = net.params();
    adam_update(&mut p, state, grad, cfg)?;
    net.set_params(&p)?;
    net.normalize_spectral();
    Ok(())
}

/// Mean over `ys` of `PSNR(B(y), B(𝒜B(y)))` with unit range, where `B` is
/// the equilibrium map.
pub fn auto_stop_metric(
    net: &DenoiserNet,
    op: &RadonOperator,
    layer_cfg: &LayerConfig,
    eq: &EquilibriumConfig,
    ys: &[Sinogram],
) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::Missing("validation measurements for the stopping metric".into()));
    }
    let layer = EquilibriumLayer::new(op, net, *layer_cfg)?;
    let vals = par::map_slice(ys, |y| -> Result<f64> {
        let (x, _) = solve_layer(&layer, y, eq)?;
        let y2 = op.forward(&x)?;
        let (x2, _) = solve_layer(&layer, &y2, eq)?;
        psnr(&x2, &x, 1.0)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Patience-based halting on a metric that should be maximised.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingMonitor {
    pub patience: usize,
    pub best_metric: Option<f64>,
    pub best_step: Option<u64>,
    pub patience_used: usize,
}

impl StoppingMonitor {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_metric: None,
            best_step: None,
            patience_used: 0,
        }
    }

    /// Records an evaluation; returns `(improved, halt)`.
    pub fn observe(&mut self, step: u64, metric: f64) -> (bool, bool) {
        let improved = self.best_metric.is_none_or(|b| metric > b);
        if improved {
            self.best_metric = Some(metric);
            self.best_step = Some(step);
            self.patience_used = 0;
        } else {
            self.patience_used += 1;
        }
        (improved, self.patience_used >= self.patience)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltReason {
    Patience,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub final_step: u64,
    pub best_step: Option<u64>,
    pub best_metric: Option<f64>,
    pub halt: HaltReason,
    /// Evaluation steps and their stopping metric, in order.
    pub evaluations: Vec<(u64, f64)>,
    pub out_dir: PathBuf,
}

/// Training sample used at `step` (1-based): a fresh permutation of the
/// training set per epoch.
pub fn sample_for_step(seed: u64, step: u64, n_train: usize) -> usize {
    let k = (step - 1) as usize;
    let epoch = (k / n_train) as u64;
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::DataOrder, epoch));
    order[k % n_train]
}

fn fmt_metric(m: Option<f64>) -> String {
    m.map(|v| format!("{v:.6}")).unwrap_or_default()
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    op: RadonOperator,
    train: Vec<Sinogram>,
    val: Vec<Sinogram>,
    out: PathBuf,
    geometry: crate::radon::Geometry,
}

impl Trainer<'_> {
    fn save(&self, net: &DenoiserNet, adam: &AdamState, step: u64, mon: &StoppingMonitor, metric: Option<f64>) -> Result<()> {
        let ck = Checkpoint {
            index: CheckpointIndex {
                format_version: 1,
                step,
                mode: self.cfg.loss.mode.label().into(),
                layers: Checkpoint::layer_shapes(net),
                lipschitz_budget: net.lipschitz_budget(),
                skip_gain: net.skip_gain(),
                leaky_slope: net.leaky_slope(),
                spectral_size: net.spectral_size(),
                geometry: self.geometry.clone(),
                norm_sq: self.op.require_norm_sq()?,
                layer_config: self.cfg.layer,
                stop_metric_db: metric,
                trainer: Some(TrainerState {
                    adam_t: adam.t,
                    best_metric: mon.best_metric,
                    best_step: mon.best_step,
                    patience_used: mon.patience_used,
                }),
            },
            net: net.clone(),
            moments: Some((adam.m.clone(), adam.v.clone())),
        };
        ck.save(&checkpoint::checkpoint_dir(&self.out, step))
    }
}

/// Trains on the measurement splits of `data`, writing the log, the
/// checkpoint trail and the `BEST` marker into `out`. With `resume`, state
/// is restored from that checkpoint and the log is truncated to its step.
pub fn train(data: &Dataset, cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ms = data.measurement_set()?;
    if ms.train.is_empty() {
        return Err(Error::Missing("training measurements".into()));
    }
    let mut val = ms.val;
    if cfg.stopping.val_subset_size > 0 {
        val.truncate(cfg.stopping.val_subset_size);
    }
    let mut op = data.operator()?;
    op.estimate_operator_norm(cfg.norm_iters, rng::derive_seed(cfg.seed, Purpose::PowerIteration, 0));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let trainer = Trainer {
        cfg,
        op,
        train: ms.train,
        val,
        out: out.to_path_buf(),
        geometry: data.manifest().geometry.clone(),
    };
    train_on(&trainer, resume)
}

fn train_on(t: &Trainer<'_>, resume: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = t.cfg;
    let ctx = LossContext {
        op: &t.op,
        layer: cfg.layer,
        equilibrium: cfg.equilibrium,
        loss: cfg.loss,
    };
    let log_path = t.out.join(LOG_FILE);
    let mut mon = StoppingMonitor::new(cfg.stopping.patience);
    let mut evaluations = Vec::new();
    let (mut net, mut adam, mut step) = match resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            if ck.index.geometry != t.geometry {
                return Err(Error::Config("resume checkpoint geometry differs from the dataset".into()));
            }
            let st = ck
                .index
                .trainer
                .clone()
                .ok_or_else(|| Error::Missing("trainer state in resume checkpoint".into()))?;
            let (m, v) = ck
                .moments
                .clone()
                .ok_or_else(|| Error::Missing("optimizer moments in resume checkpoint".into()))?;
            mon.best_metric = st.best_metric;
            mon.best_step = st.best_step;
            mon.patience_used = st.patience_used;
            let step = ck.index.step;
            truncate_log(&log_path, step, &mut evaluations)?;
            (ck.net, AdamState { t: st.adam_t, m, v }, step)
        }
        None => {
            let net = DenoiserNet::new(&cfg.denoiser)?;
            let n = net.n_params();
            let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
            (net, AdamState::new(n), 0)
        }
    };
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let started = Instant::now();
    let n_train = t.train.len();
    let img_len = t.op.image_size() * t.op.image_size();
    let mut halt = HaltReason::MaxSteps;

    while step < cfg.optim.max_steps {
        step += 1;
        let y = &t.train[sample_for_step(cfg.seed, step, n_train)];
        let eps = denoiser_noise(cfg.seed, step, img_len, cfg.loss.noise_sigma);
        let (parts, grad, _) = hybrid_loss_and_grad(&net, &ctx, y, &eps)?;
        if !parts.total().is_finite() || !all_finite(&grad) {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss_dc = {}, loss_reg = {}", parts.dc, parts.reg),
            });
        }
        adam_step(&mut net, &mut adam, &grad, &cfg.optim)?;

        let mut metric = None;
        let is_eval = step % cfg.stopping.eval_every == 0 || step == cfg.optim.max_steps;
        let mut stop = false;
        if is_eval && !t.val.is_empty() {
            let m = auto_stop_metric(&net, &t.op, &cfg.layer, &cfg.equilibrium, &t.val)?;
            metric = Some(m);
            evaluations.push((step, m));
            let (improved, halt_now) = mon.observe(step, m);
            t.save(&net, &adam, step, &mon, Some(m))?;
            if improved {
                checkpoint::mark_best(&t.out, step)?;
            }
            log::info!(
                "step {step}: stop metric {m:.3} dB (best {:.3} dB at step {})",
                mon.best_metric.unwrap_or(m),
                mon.best_step.unwrap_or(step)
            );
            stop = halt_now;
        } else if is_eval {
            t.save(&net, &adam, step, &mon, None)?;
        }
        writeln!(
            log,
            "{step},{:.9e},{:.9e},{},{:.3}",
            parts.dc,
            parts.reg,
            fmt_metric(metric),
            started.elapsed().as_secs_f64()
        )
        .map_err(|e| Error::io(&log_path, e))?;
        if stop {
            halt = HaltReason::Patience;
            break;
        }
    }
    Ok(TrainOutcome {
        final_step: step,
        best_step: mon.best_step,
        best_metric: mon.best_metric,
        halt,
        evaluations,
        out_dir: t.out.clone(),
    })
}

/// Keeps log rows up to `step`, collecting their evaluations.
fn truncate_log(path: &Path, step: u64, evaluations: &mut Vec<(u64, f64)>) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::from(LOG_HEADER);
    kept.push('\n');
    for line in text.lines().skip(1) {
        let mut cols = line.split(',');
        let s: u64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed log row {line:?}")))?;
        if s > step {
            break;
        }
        if let Some(m) = cols.nth(2).filter(|c| !c.is_empty()).and_then(|c| c.parse().ok()) {
            evaluations.push((s, m));
        }
        kept.push_str(line);
        kept.push('\n');
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}
