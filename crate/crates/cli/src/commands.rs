use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hydra_core::checkpoint::{best_checkpoint, list_checkpoints, Checkpoint, BEST_MARKER};
use hydra_core::dataset::{build_dataset, Dataset, Split};
use hydra_core::eval::{evaluate, oracle_best, oracle_scores, EvalPlan, EvalSet, Method, Reconstructor};
use hydra_core::fbp::fbp;
use hydra_core::rng::{self, Purpose};
use hydra_core::sweep::run_sweep;
use hydra_core::tensor_io::{load_tensor, save_tensor};
use hydra_core::training::{train, LossMode};
use hydra_core::tv::{pgd_reconstruct, TvConfig};
use hydra_core::{Error, Geometry, Image, RadonOperator, Sinogram};

use crate::config::RunConfig;
use crate::{BaselineArg, Command, ModeArg};

pub fn run(cmd: Command, verbose: bool) -> anyhow::Result<()> {
    match cmd {
        Command::GenData {
            config,
            out,
            views,
            seed,
            n_phantoms,
            size,
            force,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(v) = views {
                cfg.data.n_views = v;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n_phantoms {
                cfg.data.n_phantoms = n;
                cfg.data.splits = None;
            }
            if let Some(n) = size {
                cfg.data.image_size = n;
            }
            cfg.propagate();
            cfg.data.geometry().validate()?;
            let manifest = cfg.data.manifest(cfg.seed);
            let built = build_dataset(&manifest, &out, force)?;
            cfg.echo(&out)?;
            log::info!("wrote {} samples to {}", built.samples.len(), out.display());
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            mode,
            resume,
            max_steps,
            eval_every,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(m) = mode {
                cfg.train.loss.mode = match m {
                    ModeArg::Hydra => LossMode::Hydra,
                    ModeArg::Plain => LossMode::Plain,
                    ModeArg::Tv => LossMode::Tv,
                };
            }
            if let Some(s) = max_steps {
                cfg.train.optim.max_steps = s;
            }
            if let Some(e) = eval_every {
                cfg.train.stopping.eval_every = e;
            }
            let ds = Dataset::open(&data)?;
            cfg.train.denoiser.spectral_size = ds.manifest().geometry.image_size;
            cfg.train.validate()?;
            cfg.echo(&out)?;
            let outcome = train(&ds, &cfg.train, &out, resume.as_deref())?;
            log::info!(
                "stopped at step {} ({:?}); best step {:?}, metric {:?}",
                outcome.final_step,
                outcome.halt,
                outcome.best_step,
                outcome.best_metric
            );
            Ok(())
        }
        Command::Reconstruct {
            config,
            ckpt,
            sinogram,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let dir = resolve_checkpoint(&ckpt)?;
            let ck = Checkpoint::load(&dir)?;
            let geometry = ck.index.geometry.clone();
            let y = read_sinogram(&sinogram, &geometry)?;
            let op = RadonOperator::from_geometry(&geometry)?;
            let recon = Reconstructor::from_checkpoint(&dir, &geometry, cfg.eval.equilibrium)?;
            let (x, report) = recon.reconstruct(&op, &y)?;
            write_output(&out, &x)?;
            if let Some(rep) = report {
                let p = out.join("solve_report.json");
                fs::write(&p, serde_json::to_string_pretty(&rep)?).with_context(|| p.display().to_string())?;
                if verbose {
                    println!("{}", serde_json::to_string(&rep)?);
                }
            }
            cfg.echo(&out)?;
            Ok(())
        }
        Command::Baseline {
            config,
            method,
            sinogram,
            data,
            alpha,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let ds = Dataset::open(&data)?;
            let geometry = ds.manifest().geometry.clone();
            let y = read_sinogram(&sinogram, &geometry)?;
            let mut op = ds.operator()?;
            let x = match method {
                BaselineArg::Fbp => fbp(&op, &y, &cfg.eval.fbp)?,
                BaselineArg::Tv => {
                    op.estimate_operator_norm(cfg.train.norm_iters, norm_seed(&cfg));
                    let tv = TvConfig {
                        alpha: alpha.unwrap_or(cfg.eval.tv.alpha),
                        ..cfg.eval.tv
                    };
                    pgd_reconstruct(&op, &y, &tv)?.image
                }
            };
            write_output(&out, &x)?;
            cfg.echo(&out)?;
            Ok(())
        }
        Command::Eval {
            config,
            data,
            ckpts,
            methods,
            tv_alpha,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let methods: Vec<Method> = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods.iter().map(|m| m.parse()).collect::<Result<_, Error>>()?
            };
            let ckpts = parse_ckpts(&ckpts)?;
            let mut sets = Vec::new();
            for d in &data {
                let ds = Dataset::open(d)?;
                let mut op = ds.operator()?;
                op.estimate_operator_norm(cfg.train.norm_iters, norm_seed(&cfg));
                let samples = ds
                    .noisy(Split::Test)?
                    .into_iter()
                    .zip(ds.phantoms(Split::Test)?)
                    .map(|((id, y), (_, p))| (id, y, p))
                    .collect();
                sets.push((
                    ds.manifest().geometry.clone(),
                    EvalSet {
                        n_views: ds.manifest().geometry.n_views,
                        op,
                        samples,
                    },
                ));
            }
            let mut plans = Vec::new();
            for (geometry, set) in &sets {
                let mut list = Vec::new();
                for &m in &methods {
                    list.push((m, method_reconstructor(m, &ckpts, geometry, set, &cfg, tv_alpha)?));
                }
                plans.push(EvalPlan { set, methods: list });
            }
            let report = evaluate(&plans, &cfg.eval, Some(&out))?;
            cfg.echo(&out)?;
            print!("{}", report.summary_table());
            Ok(())
        }
        Command::Sweep { config, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            cfg.sweep.validate()?;
            cfg.echo(&out)?;
            let rep = run_sweep(&cfg.sweep, &out)?;
            print!("{}", rep.report.summary_table());
            Ok(())
        }
    }
}

fn norm_seed(cfg: &RunConfig) -> u64 {
    rng::derive_seed(cfg.train.seed, Purpose::PowerIteration, 0)
}

/// A checkpoint directory, or the best checkpoint of a run directory.
fn resolve_checkpoint(path: &Path) -> anyhow::Result<PathBuf> {
    if path.join(BEST_MARKER).is_file() {
        Ok(best_checkpoint(path)?)
    } else {
        Ok(path.to_path_buf())
    }
}

fn read_sinogram(path: &Path, geometry: &Geometry) -> anyhow::Result<Sinogram> {
    let y = Sinogram::from_tensor(&load_tensor(path)?)?;
    if y.n_angles() != geometry.n_views || y.n_detectors() != geometry.n_detectors {
        return Err(Error::Dimension(format!(
            "sinogram is {}x{}, geometry expects {}x{}",
            y.n_angles(),
            y.n_detectors(),
            geometry.n_views,
            geometry.n_detectors
        ))
        .into());
    }
    Ok(y)
}

fn write_output(out: &Path, x: &Image) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    save_tensor(&out.join("recon.tns"), &x.to_tensor())?;
    x.save_png(&out.join("recon.png"))?;
    Ok(())
}

fn parse_ckpts(raw: &[String]) -> anyhow::Result<Vec<(Method, PathBuf)>> {
    raw.iter()
        .map(|s| {
            let Some((m, p)) = s.split_once('=') else {
                bail!(Error::Config(format!("--ckpt expects METHOD=DIR, got {s:?}")));
            };
            Ok((m.parse::<Method>()?, PathBuf::from(p)))
        })
        .collect()
}

/// Every directory given for `method` whose checkpoints match `geometry`.
fn matching_dirs<'a>(ckpts: &'a [(Method, PathBuf)], method: Method, geometry: &Geometry) -> Vec<&'a Path> {
    ckpts
        .iter()
        .filter(|(m, _)| *m == method)
        .map(|(_, p)| p.as_path())
        .filter(|p| {
            let dir = if p.join(BEST_MARKER).is_file() {
                best_checkpoint(p).ok()
            } else if p.join(hydra_core::checkpoint::INDEX_FILE).is_file() {
                Some(p.to_path_buf())
            } else {
                list_checkpoints(p).ok().and_then(|c| c.last().map(|(_, d)| d.clone()))
            };
            dir.and_then(|d| Checkpoint::load(&d).ok())
                .is_some_and(|c| &c.index.geometry == geometry)
        })
        .collect()
}

fn method_reconstructor(
    method: Method,
    ckpts: &[(Method, PathBuf)],
    geometry: &Geometry,
    set: &EvalSet,
    cfg: &RunConfig,
    tv_alpha: Option<f64>,
) -> anyhow::Result<Result<Reconstructor, String>> {
    Ok(match method {
        Method::Fbp => Ok(Reconstructor::Fbp(cfg.eval.fbp)),
        Method::Tv => Ok(Reconstructor::Tv(TvConfig {
            alpha: tv_alpha.unwrap_or(cfg.eval.tv.alpha),
            ..cfg.eval.tv
        })),
        Method::HydraMax => match matching_dirs(ckpts, method, geometry).first() {
            None => Err(format!("no checkpoint given for {} at {} views", method.label(), set.n_views)),
            Some(run) => {
                let list = list_checkpoints(run)?;
                let scores = oracle_scores(&list, set, geometry, cfg.eval.equilibrium, &cfg.eval.ssim)?;
                match oracle_best(&scores) {
                    Some((step, psnr)) => {
                        log::info!("hydra-max at {} views: step {step} ({psnr:.2} dB)", set.n_views);
                        Ok(Reconstructor::from_checkpoint(
                            &hydra_core::checkpoint::checkpoint_dir(run, step),
                            geometry,
                            cfg.eval.equilibrium,
                        )?)
                    }
                    None => Err(format!("{} holds no checkpoints", run.display())),
                }
            }
        },
        _ => match matching_dirs(ckpts, method, geometry).first() {
            None => Err(format!("no checkpoint given for {} at {} views", method.label(), set.n_views)),
            Some(p) => Ok(Reconstructor::from_checkpoint(
                &resolve_checkpoint(p)?,
                geometry,
                cfg.eval.equilibrium,
            )?),
        },
    })
}
