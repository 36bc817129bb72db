//! Test-set evaluation of classical and learned reconstructions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::checkpoint::Checkpoint;
use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::fbp::{fbp, FbpConfig};
use crate::layer::{EquilibriumLayer, LayerConfig};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::radon::{Geometry, RadonOperator};
use crate::solver::{solve_layer, EquilibriumConfig, InitKind, SolveReport};
use crate::tensor_io::save_tensor;
use crate::tv::{pgd_reconstruct, TvConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "method,n_views,sample_id,psnr_db,ssim,time_s";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fbp,
    Tv,
    DeqPlain,
    DeqTv,
    HydraAuto,
    HydraMax,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fbp,
        Method::Tv,
        Method::DeqPlain,
        Method::DeqTv,
        Method::HydraAuto,
        Method::HydraMax,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Tv => "tv",
            Method::DeqPlain => "deq-plain",
            Method::DeqTv => "deq-tv",
            Method::HydraAuto => "hydra-auto",
            Method::HydraMax => "hydra-max",
        }
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Fbp | Method::Tv)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A ready-to-run reconstruction method.
#[derive(Debug, Clone)]
pub enum Reconstructor {
    Fbp(FbpConfig),
    Tv(TvConfig),
    Deq {
        net: DenoiserNet,
        layer: LayerConfig,
        equilibrium: EquilibriumConfig,
        /// `‖𝒜‖²` the model was trained with; overrides the operator's.
        norm_sq: Option<f64>,
    },
}

impl Reconstructor {
    /// Loads a trained model, checking that it was trained for `geometry`.
    pub fn from_checkpoint(dir: &Path, geometry: &Geometry, equilibrium: EquilibriumConfig) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        if &ck.index.geometry != geometry {
            return Err(Error::Config(format!(
                "checkpoint {} was trained for a different geometry",
                dir.display()
            )));
        }
        Ok(Reconstructor::Deq {
            net: ck.net,
            layer: ck.index.layer_config,
            equilibrium,
            norm_sq: Some(ck.index.norm_sq),
        })
    }

    pub fn reconstruct(&self, op: &RadonOperator, y: &Sinogram) -> Result<(Image, Option<SolveReport>)> {
        match self {
            Reconstructor::Fbp(cfg) => Ok((fbp(op, y, cfg)?, None)),
            Reconstructor::Tv(cfg) => Ok((pgd_reconstruct(op, y, cfg)?.image, None)),
            Reconstructor::Deq {
                net,
                layer,
                equilibrium,
                norm_sq,
            } => {
                let rescaled;
                let op = match norm_sq {
                    Some(v) if op.norm_sq() != Some(*v) => {
                        let mut o = op.clone();
                        o.set_norm_sq(*v);
                        rescaled = o;
                        &rescaled
                    }
                    _ => op,
                };
                let l = EquilibriumLayer::new(op, net, *layer)?;
                let (x, rep) = solve_layer(&l, y, equilibrium)?;
                Ok((x, Some(rep)))
            }
        }
    }
}

/// Evaluation settings shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub fbp: FbpConfig,
    pub tv: TvConfig,
    pub equilibrium: EquilibriumConfig,
    pub ssim: SsimConfig,
    /// Write per-sample PNG and tensor files.
    pub save_images: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fbp: FbpConfig {
                clamp: true,
                ..Default::default()
            },
            tv: TvConfig::default(),
            equilibrium: EquilibriumConfig {
                init: InitKind::Fbp,
                ..Default::default()
            },
            ssim: SsimConfig::default(),
            save_images: true,
        }
    }
}

/// Test measurements and their evaluation-only phantoms at one view count.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub n_views: usize,
    /// Operator with `‖𝒜‖²` set.
    pub op: RadonOperator,
    pub samples: Vec<(u64, Sinogram, Image)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub method: Method,
    pub n_views: usize,
    pub sample_id: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub time_s: f64,
    pub solver_iters: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n_views: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_time_s: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub method: Method,
    pub n_views: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<SummaryRow>,
    pub samples: Vec<SampleResult>,
    pub skipped: Vec<Skipped>,
}

impl MetricsReport {
    pub fn row(&self, method: Method, n_views: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.n_views == n_views)
    }

    pub fn view_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.n_views).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Aligned text table, one block of methods per view count.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>10} {:>8} {:>10} {:>5}",
            "method", "views", "PSNR(dB)", "SSIM", "time(s)", "n"
        );
        for v in self.view_counts() {
            for m in Method::ALL {
                if let Some(r) = self.row(m, v) {
                    let _ = writeln!(
                        s,
                        "{:<12} {:>6} {:>10.2} {:>8.4} {:>10.4} {:>5}",
                        m.label(),
                        v,
                        r.mean_psnr_db,
                        r.mean_ssim,
                        r.mean_time_s,
                        r.n_samples
                    );
                }
            }
        }
        for sk in &self.skipped {
            let _ = writeln!(s, "skipped {} at {} views: {}", sk.method.label(), sk.n_views, sk.reason);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.method.label(),
                r.n_views,
                r.sample_id,
                r.psnr_db,
                r.ssim,
                r.time_s
            );
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs one method over one set, returning per-sample results and
/// reconstructions. Samples run one at a time so that timings are not
/// inflated by competing samples; each reconstruction uses the worker pool
/// internally.
pub fn run_method(
    method: Method,
    recon: &Reconstructor,
    set: &EvalSet,
    ssim_cfg: &SsimConfig,
) -> Result<(Vec<SampleResult>, Vec<Image>)> {
    let mut results = Vec::with_capacity(set.samples.len());
    let mut images = Vec::with_capacity(set.samples.len());
    for (id, y, phantom) in &set.samples {
        let t0 = Instant::now();
        let (x, rep) = recon.reconstruct(&set.op, y)?;
        let time_s = t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        results.push(SampleResult {
            method,
            n_views: set.n_views,
            sample_id: *id,
            psnr_db: psnr(&x, phantom, 1.0)?,
            ssim: ssim(&x, phantom, ssim_cfg)?,
            time_s,
            solver_iters: rep.as_ref().map(|r| r.iterations),
            converged: rep.as_ref().map(|r| r.converged),
        });
        images.push(x);
    }
    Ok((results, images))
}

/// Methods to run at one view count; `None` marks a method whose model is
/// unavailable, with the reason.
pub struct EvalPlan<'a> {
    pub set: &'a EvalSet,
    pub methods: Vec<(Method, std::result::Result<Reconstructor, String>)>,
}

/// Evaluates every plan; with `out`, writes `results.csv`, `summary.txt`
/// and, if enabled, reconstructions under `recon/<method>/<views>/`.
pub fn evaluate(plans: &[EvalPlan<'_>], cfg: &EvalConfig, out: Option<&Path>) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for plan in plans {
        let set = plan.set;
        for (method, recon) in &plan.methods {
            let recon = match recon {
                Ok(r) => r,
                Err(reason) => {
                    log::warn!("skipping {} at {} views: {reason}", method.label(), set.n_views);
                    report.skipped.push(Skipped {
                        method: *method,
                        n_views: set.n_views,
                        reason: reason.clone(),
                    });
                    continue;
                }
            };
            let (results, images) = run_method(*method, recon, set, &cfg.ssim)?;
            if let (Some(out), true) = (out, cfg.save_images) {
                save_images(out, *method, set, &images)?;
            }
            report.rows.push(SummaryRow {
                method: *method,
                n_views: set.n_views,
                mean_psnr_db: mean(results.iter().map(|r| r.psnr_db)),
                mean_ssim: mean(results.iter().map(|r| r.ssim)),
                mean_time_s: mean(results.iter().map(|r| r.time_s)),
                n_samples: results.len(),
            });
            report.samples.extend(results);
        }
    }
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        report.write_csv(&out.join(RESULTS_FILE))?;
        let p = out.join(SUMMARY_FILE);
        fs::write(&p, report.summary_table()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

fn save_images(out: &Path, method: Method, set: &EvalSet, images: &[Image]) -> Result<()> {
    let dir: PathBuf = out.join("recon").join(method.label()).join(set.n_views.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for ((id, _, _), img) in set.samples.iter().zip(images) {
        img.save_png(&dir.join(format!("{id:05}.png")))?;
        save_tensor(&dir.join(format!("{id:05}.tns")), &img.to_tensor())?;
    }
    Ok(())
}

/// Mean test PSNR of every checkpoint in `ckpts`; the oracle choice is the
/// maximum (earliest on ties).
pub fn oracle_scores(
    ckpts: &[(u64, PathBuf)],
    set: &EvalSet,
    geometry: &Geometry,
    equilibrium: EquilibriumConfig,
    ssim_cfg: &SsimConfig,
) -> Result<Vec<(u64, f64)>> {
    ckpts
        .iter()
        .map(|(step, dir)| {
            let r = Reconstructor::from_checkpoint(dir, geometry, equilibrium)?;
            let (res, _) = run_method(Method::HydraMax, &r, set, ssim_cfg)?;
            let score = mean(res.iter().map(|r| r.psnr_db));
            log::debug!("checkpoint step {step}: mean test PSNR {score:.3} dB");
            Ok((*step, score))
        })
        .collect()
}

pub fn oracle_best(scores: &[(u64, f64)]) -> Option<(u64, f64)> {
    scores
        .iter()
        .copied()
        .fold(None, |best: Option<(u64, f64)>, (s, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((s, p)),
        })
}
