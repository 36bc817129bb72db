//! End-to-end comparison over several view counts: data generation, TV
//! tuning, training of the three learned variants and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{best_checkpoint, list_checkpoints};
use crate::dataset::{build_dataset, Dataset, DatasetManifest, PhantomSource, Split, SplitSizes};
use crate::error::{Error, Result};
use crate::eval::{evaluate, oracle_best, oracle_scores, EvalConfig, EvalPlan, EvalSet, MetricsReport, Method, Reconstructor};
use crate::phantom::PhantomConfig;
use crate::radon::Geometry;
use crate::rng::{self, Purpose};
use crate::tv::{grid_search_alpha, GridSearch, TvConfig, DEFAULT_ALPHA_GRID};
use crate::training::{train, LossMode, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seed: u64,
    pub image_size: usize,
    pub n_phantoms: usize,
    /// Explicit split sizes; 70/15/15 of `n_phantoms` when absent.
    pub splits: Option<SplitSizes>,
    pub views: Vec<usize>,
    pub n_angles_full: usize,
    pub photons_per_bin: f64,
    pub phantom: PhantomConfig,
    pub tv_alpha_grid: Vec<f64>,
    /// Validation samples used for the TV grid search; 0 means all.
    pub tv_tune_samples: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Modes trained at each view count.
    pub modes: Vec<LossMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 64,
            n_phantoms: 200,
            splits: None,
            views: vec![16, 32, 64],
            n_angles_full: 384,
            photons_per_bin: 1000.0,
            phantom: PhantomConfig::default(),
            tv_alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            tv_tune_samples: 10,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            modes: vec![LossMode::Plain, LossMode::Tv, LossMode::Hydra],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("sweep needs at least one view count".into()));
        }
        if self.n_phantoms < 3 {
            return Err(Error::Config("sweep needs at least three phantoms".into()));
        }
        if let Some(s) = &self.splits {
            if s.total() != self.n_phantoms || s.train == 0 || s.val == 0 || s.test == 0 {
                return Err(Error::Config(format!(
                    "splits {}/{}/{} must be nonempty and sum to n_phantoms = {}",
                    s.train, s.val, s.test, self.n_phantoms
                )));
            }
        }
        self.train.validate()
    }

    pub fn split_sizes(&self) -> SplitSizes {
        self.splits.unwrap_or_else(|| SplitSizes::ratio_70_15_15(self.n_phantoms))
    }

    pub fn geometry(&self, n_views: usize) -> Geometry {
        Geometry {
            n_angles_full: self.n_angles_full,
            ..Geometry::sparse(self.image_size, n_views)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub n_views: usize,
    pub tv_search: GridSearch,
    pub runs: Vec<(LossMode, TrainOutcome)>,
    /// Mean test PSNR of every hydra checkpoint.
    pub hydra_oracle_scores: Vec<(u64, f64)>,
    pub oracle_step: Option<u64>,
    pub auto_step: Option<u64>,
    pub eval_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub report: MetricsReport,
    pub views: Vec<ViewSummary>,
}

impl SweepReport {
    pub fn view(&self, n_views: usize) -> Option<&ViewSummary> {
        self.views.iter().find(|v| v.n_views == n_views)
    }
}

fn run_dir(out: &Path, n_views: usize, mode: LossMode) -> PathBuf {
    out.join("runs").join(format!("v{n_views}")).join(mode.label())
}

/// Runs the whole comparison under `out`, writing `sweep.json` and the
/// evaluation artifacts in `out/eval`.
pub fn run_sweep(cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sets = Vec::new();
    let mut summaries = Vec::new();
    let mut plans_methods = Vec::new();

    for &v in &cfg.views {
        log::info!("sweep: {v} views");
        let geometry = cfg.geometry(v);
        let mut manifest = DatasetManifest::synthetic(geometry.clone(), cfg.split_sizes(), cfg.seed);
        manifest.photons_per_bin = cfg.photons_per_bin;
        manifest.phantoms = PhantomSource::Synthetic(PhantomConfig {
            size: cfg.image_size,
            seed: cfg.seed,
            ..cfg.phantom.clone()
        });
        let data_dir = out.join("data").join(format!("v{v}"));
        build_dataset(&manifest, &data_dir, true)?;
        let data = Dataset::open(&data_dir)?;
        let mut op = data.operator()?;
        op.estimate_operator_norm(cfg.train.norm_iters, rng::derive_seed(cfg.train.seed, Purpose::PowerIteration, 0));

        let mut val_y: Vec<_> = data.noisy(Split::Val)?.into_iter().map(|(_, s)| s).collect();
        let mut val_x: Vec<_> = data.phantoms(Split::Val)?.into_iter().map(|(_, p)| p).collect();
        if cfg.tv_tune_samples > 0 {
            val_y.truncate(cfg.tv_tune_samples);
            val_x.truncate(cfg.tv_tune_samples);
        }
        let tv_search = grid_search_alpha(&op, &val_y, &val_x, &cfg.tv_alpha_grid, &cfg.eval.tv)?;
        log::info!("sweep: {v} views, TV alpha {}", tv_search.best_alpha);

        let mut runs = Vec::new();
        for &mode in &cfg.modes {
            let mut tc = cfg.train.clone();
            tc.loss.mode = mode;
            tc.loss.tv_alpha = tv_search.best_alpha;
            tc.denoiser.spectral_size = cfg.image_size;
            let dir = run_dir(out, v, mode);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            log::info!("sweep: {v} views, training {}", mode.label());
            runs.push((mode, train(&data, &tc, &dir, None)?));
        }

        let samples = data
            .noisy(Split::Test)?
            .into_iter()
            .zip(data.phantoms(Split::Test)?)
            .map(|((id, y), (pid, p))| {
                debug_assert_eq!(id, pid);
                (id, y, p)
            })
            .collect();
        let set = EvalSet { n_views: v, op, samples };

        let mut methods: Vec<(Method, std::result::Result<Reconstructor, String>)> = vec![
            (Method::Fbp, Ok(Reconstructor::Fbp(cfg.eval.fbp))),
            (
                Method::Tv,
                Ok(Reconstructor::Tv(TvConfig {
                    alpha: tv_search.best_alpha,
                    ..cfg.eval.tv
                })),
            ),
        ];
        let load_best = |mode: LossMode| -> std::result::Result<Reconstructor, String> {
            let dir = run_dir(out, v, mode);
            best_checkpoint(&dir)
                .and_then(|d| Reconstructor::from_checkpoint(&d, &geometry, cfg.eval.equilibrium))
                .map_err(|e| e.to_string())
        };
        methods.push((Method::DeqPlain, load_best(LossMode::Plain)));
        methods.push((Method::DeqTv, load_best(LossMode::Tv)));
        methods.push((Method::HydraAuto, load_best(LossMode::Hydra)));

        let hydra_dir = run_dir(out, v, LossMode::Hydra);
        let (scores, oracle) = match list_checkpoints(&hydra_dir) {
            Ok(ck) if !ck.is_empty() => {
                let scores = oracle_scores(&ck, &set, &geometry, cfg.eval.equilibrium, &cfg.eval.ssim)?;
                let best = oracle_best(&scores);
                (scores, best)
            }
            _ => (Vec::new(), None),
        };
        let max_recon = match oracle {
            Some((step, _)) => Reconstructor::from_checkpoint(
                &crate::checkpoint::checkpoint_dir(&hydra_dir, step),
                &geometry,
                cfg.eval.equilibrium,
            )
            .map_err(|e| e.to_string()),
            None => Err("no hydra checkpoints".to_string()),
        };
        methods.push((Method::HydraMax, max_recon));

        let auto_step = runs
            .iter()
            .find(|(m, _)| *m == LossMode::Hydra)
            .and_then(|(_, o)| o.best_step);
        summaries.push(ViewSummary {
            n_views: v,
            tv_search,
            runs,
            hydra_oracle_scores: scores,
            oracle_step: oracle.map(|(s, _)| s),
            auto_step,
            eval_every: cfg.train.stopping.eval_every,
        });
        sets.push(set);
        plans_methods.push(methods);
    }

    let plans: Vec<EvalPlan<'_>> = sets
        .iter()
        .zip(plans_methods)
        .map(|(set, methods)| EvalPlan { set, methods })
        .collect();
    let report = evaluate(&plans, &cfg.eval, Some(&out.join("eval")))?;
    let result = SweepReport {
        report,
        views: summaries,
    };
    let path = out.join("sweep.json");
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}
