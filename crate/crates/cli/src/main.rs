//! `hydra`: data generation, training, reconstruction and evaluation for
//! sparse-view CT with deep-equilibrium models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hydra_core::error::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "hydra", version, about = "Self-supervised deep-equilibrium CT reconstruction")]
pub struct Cli {
    /// Worker threads for data-parallel loops (0 = all cores).
    #[arg(long, global = true, env = "HYDRA_THREADS")]
    pub threads: Option<usize>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Hydra,
    Plain,
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Fbp,
    Tv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a hashed manifest.
    GenData {
        /// Run configuration (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of retained views.
        #[arg(long)]
        views: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of phantoms.
        #[arg(long)]
        n_phantoms: Option<usize>,
        /// Override the image side.
        #[arg(long)]
        size: Option<usize>,
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a denoiser on the measurement splits of a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for the log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Loss variant.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the step cap.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Override the evaluation interval.
        #[arg(long)]
        eval_every: Option<u64>,
    },
    /// Reconstruct one sinogram with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory, or a run directory with a BEST marker.
        #[arg(long)]
        ckpt: PathBuf,
        /// Sinogram tensor file.
        #[arg(long)]
        sinogram: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one sinogram with FBP or TV-regularized PGD.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: BaselineArg,
        /// Sinogram tensor file.
        #[arg(long)]
        sinogram: PathBuf,
        /// Dataset directory providing the geometry.
        #[arg(long)]
        data: PathBuf,
        /// TV weight (overrides the config).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate methods on the test split of one or more datasets.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directories (one per view count).
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// `METHOD=DIR` pairs; DIR is a checkpoint or a run directory.
        /// hydra-max takes a run directory and selects its checkpoint by
        /// test PSNR.
        #[arg(long = "ckpt", num_args = 1..)]
        ckpts: Vec<String>,
        /// Methods to evaluate (default: all).
        #[arg(long, num_args = 1..)]
        methods: Vec<String>,
        /// TV weight for the tv method (overrides the config).
        #[arg(long)]
        tv_alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full comparison: data, TV tuning, training and evaluation.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hydra_core::Error>().map(|e| e.kind()) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command, cli.verbose > 0) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
