//! The equilibrium layer `𝒩_θ(𝒢(x, y))`.
//!
//! `𝒢(x, y) = x − 2s𝒜ᵀ(𝒜x − y)` is a gradient step on the data term and
//! `𝒩_θ(v) = Ω(λD_θ(v) + (1−λ)v)` mixes the denoiser with the identity.

use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::denoiser::{DenoiserNet, Omega};
use crate::error::{Error, Result};
use crate::radon::RadonOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerConfig {
    /// `λ` in the open interval (0, 1).
    pub lambda_mix: f64,
    pub omega: Omega,
    /// Gradient step as a fraction of `1/‖𝒜‖²`.
    pub step_scale: f64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            lambda_mix: 0.4,
            omega: Omega::Clamp,
            step_scale: 0.95,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mix > 0.0 && self.lambda_mix < 1.0) {
            return Err(Error::Config(format!(
                "lambda_mix must lie in (0, 1), got {}",
                self.lambda_mix
            )));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::Config(format!(
                "step_scale must lie in (0, 1], got {}",
                self.step_scale
            )));
        }
        Ok(())
    }

    /// `s = step_scale / ‖𝒜‖²`.
    pub fn step(&self, op: &RadonOperator) -> Result<f64> {
        Ok(self.step_scale / op.require_norm_sq()?)
    }

    /// Lipschitz bound `λ·L_D + (1−λ)` of the layer for a denoiser with
    /// constant `lip_d`.
    pub fn contraction_bound(&self, lip_d: f64) -> f64 {
        self.lambda_mix * lip_d + (1.0 - self.lambda_mix)
    }
}

/// Intermediate values of one layer application.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `v = 𝒢(x, y)`
    pub v: Image,
    /// `u = λD(v) + (1−λ)v`, before `Ω`.
    pub u: Image,
    pub out: Image,
}

/// A layer bound to an operator, a network and a configuration.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumLayer<'a> {
    pub op: &'a RadonOperator,
    pub net: &'a DenoiserNet,
    pub cfg: LayerConfig,
    step: f64,
}

impl<'a> EquilibriumLayer<'a> {
    pub fn new(op: &'a RadonOperator, net: &'a DenoiserNet, cfg: LayerConfig) -> Result<Self> {
        cfg.validate()?;
        let step = cfg.step(op)?;
        Ok(Self { op, net, cfg, step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn apply(&self, x: &Image, y: &Sinogram) -> Result<Image> {
        Ok(self.trace(x, y)?.out)
    }

    pub fn trace(&self, x: &Image, y: &Sinogram) -> Result<LayerTrace> {
        let v = self.op.gradient_map(x, y, self.step)?;
        let d = self.net.forward(&v);
        let lam = self.cfg.lambda_mix;
        let u_data = d
            .data()
            .iter()
            .zip(v.data())
            .map(|(di, vi)| lam * di + (1.0 - lam) * vi)
            .collect();
        let u = Image::from_vec(v.size(), u_data)?;
        let out = self.cfg.omega.apply(&u);
        Ok(LayerTrace { v, u, out })
    }
}

/// `𝒩_θ(𝒢(x, y))`.
pub fn layer_apply(
    net: &DenoiserNet,
    cfg: &LayerConfig,
    op: &RadonOperator,
    x: &Image,
    y: &Sinogram,
) -> Result<Image> {
    EquilibriumLayer::new(op, net, *cfg)?.apply(x, y)
}
