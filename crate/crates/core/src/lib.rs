//! Measurement-only reconstruction for sparse-view CT with deep-equilibrium
//! models.
//!
//! The crate is organised bottom-up:
//!
//! * [`radon`], [`fbp`], [`noise`]: the parallel-beam forward model, its
//!   matched adjoint, filtered backprojection and Poisson measurement noise.
//! * [`phantom`], [`tensor_io`], [`dataset`]: synthetic data, the on-disk
//!   tensor format and dataset manifests.
//! * [`tv`]: total variation, its proximal map and the proximal-gradient
//!   baseline.
//! * [`denoiser`], [`layer`]: the Lipschitz-constrained convolutional
//!   denoiser and the equilibrium layer built around it.
//! * [`solver`]: Picard and Anderson fixed-point solvers.
//! * [`training`]: the hybrid loss, Jacobian-free gradients, Adam and the
//!   automated stopping monitor.
//! * [`metrics`], [`eval`], [`sweep`]: PSNR/SSIM, test-set evaluation and the
//!   end-to-end comparison sweep.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! bit-identical either way.

pub mod array;
pub mod checkpoint;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod fbp;
pub mod layer;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod par;
pub mod phantom;
pub mod radon;
pub mod rng;
pub mod solver;
pub mod sweep;
pub mod tensor_io;
pub mod training;
pub mod tv;

pub use array::{Image, Sinogram};
pub use error::{Error, Result};
pub use radon::{Geometry, RadonOperator};
