//! Lipschitz-constrained convolutional denoiser.
//!
//! `D(v) = skip·v + R(v)` where `R` is a stack of 3×3 "same" convolutions
//! with leaky-ReLU (slope 0.2) between them. Each convolution carries a
//! persistent power-iteration vector; [`DenoiserNet::normalize_spectral`]
//! caps every layer's estimated operator norm at
//! `(budget − skip)^(1/L)`, so the network is a contraction with constant at
//! most `budget` whenever the estimates have converged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Image;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::par;
use crate::rng::{self, Purpose};

const K: usize = 3;
const KK: usize = K * K;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Channel widths, first and last must be 1.
    pub channels: Vec<usize>,
    pub lipschitz_budget: f64,
    /// Gain of the identity skip path; 0 gives a plain convolutional net.
    pub skip_gain: f64,
    pub leaky_slope: f64,
    /// Image side on which layer norms are estimated.
    pub spectral_size: usize,
    /// Power-iteration steps used once at initialisation.
    pub init_power_iters: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 32, 32, 32, 1],
            lipschitz_budget: 0.9,
            skip_gain: 0.0,
            leaky_slope: 0.2,
            spectral_size: 64,
            init_power_iters: 50,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels[0] != 1 || *self.channels.last().unwrap() != 1 {
            return Err(Error::Config(
                "denoiser channels must start and end with 1 and have at least one layer".into(),
            ));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if !(self.lipschitz_budget > 0.0 && self.lipschitz_budget < 1.0) {
            return Err(Error::Config(format!(
                "lipschitz_budget must lie in (0, 1), got {}",
                self.lipschitz_budget
            )));
        }
        if !(self.skip_gain >= 0.0 && self.skip_gain < self.lipschitz_budget) {
            return Err(Error::Config("skip_gain must lie in [0, lipschitz_budget)".into()));
        }
        if !(0.0..=1.0).contains(&self.leaky_slope) {
            return Err(Error::Config("leaky_slope must lie in [0, 1]".into()));
        }
        if self.spectral_size == 0 {
            return Err(Error::Config("spectral_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Power-iteration vector over the input space, unit norm.
    pub u: Vec<f64>,
    /// Latest operator-norm estimate.
    pub sigma: f64,
}

impl ConvLayer {
    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let s = (o * self.in_ch + i) * KK;
        &self.weight[s..s + KK]
    }

    /// Zero-padded 3×3 convolution (cross-correlation) over `n×n` planes.
    fn conv(&self, input: &[f64], n: usize, with_bias: bool) -> Vec<f64> {
        let plane = n * n;
        let mut out = vec![0.0; self.out_ch * plane];
        par::for_each_chunk_mut(&mut out, plane, |o, dst| {
            if with_bias {
                dst.iter_mut().for_each(|v| *v = self.bias[o]);
            }
            for i in 0..self.in_ch {
                let src = &input[i * plane..(i + 1) * plane];
                accumulate_correlate(dst, src, self.kernel(o, i), n);
            }
        });
        out
    }

    /// Transpose of the linear part of [`conv`](Self::conv).
    fn conv_transpose(&self, grad_out: &[f64], n: usize) -> Vec<f64> {
        let plane = n * n;
        let mut out = vec![0.0; self.in_ch * plane];
        par::for_each_chunk_mut(&mut out, plane, |i, dst| {
            for o in 0..self.out_ch {
                let src = &grad_out[o * plane..(o + 1) * plane];
                accumulate_convolve(dst, src, self.kernel(o, i), n);
            }
        });
        out
    }

    /// Weight and bias gradients given the layer input and output cotangent.
    fn param_grads(&self, input: &[f64], grad_out: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let plane = n * n;
        let per_out = par::map_range(self.out_ch, |o| {
            let g = &grad_out[o * plane..(o + 1) * plane];
            let mut gw = vec![0.0; self.in_ch * KK];
            for i in 0..self.in_ch {
                let src = &input[i * plane..(i + 1) * plane];
                for ky in 0..K {
                    for kx in 0..K {
                        gw[i * KK + ky * K + kx] = shifted_dot(g, src, ky as isize - 1, kx as isize - 1, n);
                    }
                }
            }
            (gw, g.iter().sum::<f64>())
        });
        let mut gw = Vec::with_capacity(self.weight.len());
        let mut gb = Vec::with_capacity(self.out_ch);
        for (w, b) in per_out {
            gw.extend(w);
            gb.push(b);
        }
        (gw, gb)
    }

    /// One power-iteration step on `WᵀW`; updates `u` and returns `‖W u‖`.
    fn power_step(&mut self, n: usize) -> f64 {
        if self.u.len() != self.in_ch * n * n {
            self.u = unit_start(self.in_ch * n * n);
        }
        let wu = self.conv(&self.u, n, false);
        let mut next = self.conv_transpose(&wu, n);
        let nn = norm(&next);
        if nn == 0.0 {
            self.sigma = 0.0;
            return 0.0;
        }
        next.iter_mut().for_each(|v| *v /= nn);
        self.u = next;
        let sigma = norm(&self.conv(&self.u, n, false));
        self.sigma = sigma;
        sigma
    }
}

fn unit_start(len: usize) -> Vec<f64> {
    let mut rng = rng::stream(len as u64, Purpose::PowerIteration, 1);
    let mut v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// `Σ_{r,c} g[r,c]·x[r+dy, c+dx]` with zero padding.
fn shifted_dot(g: &[f64], x: &[f64], dy: isize, dx: isize, n: usize) -> f64 {
    let n_i = n as isize;
    let (r0, r1) = (0.max(-dy), n_i.min(n_i - dy));
    let (c0, c1) = (0.max(-dx), n_i.min(n_i - dx));
    let mut acc = 0.0;
    let w = (c1 - c0) as usize;
    for r in r0..r1 {
        let go = (r * n_i + c0) as usize;
        let xo = ((r + dy) * n_i + dx + c0) as usize;
        acc += dot(&g[go..go + w], &x[xo..xo + w]);
    }
    acc
}

/// `dst[r,c] += Σ k[ky,kx]·src[r+ky−1, c+kx−1]`
fn accumulate_correlate(dst: &mut [f64], src: &[f64], k: &[f64], n: usize) {
    let n_i = n as isize;
    for ky in 0..K {
        for kx in 0..K {
            let w = k[ky * K + kx];
            if w == 0.0 {
                continue;
            }
            let (dy, dx) = (ky as isize - 1, kx as isize - 1);
            let (r0, r1) = (0.max(-dy), n_i.min(n_i - dy));
            let (c0, c1) = (0.max(-dx), n_i.min(n_i - dx));
            let len = (c1 - c0) as usize;
            for r in r0..r1 {
                let d0 = (r * n_i + c0) as usize;
                let d = &mut dst[d0..d0 + len];
                let so = ((r + dy) * n_i + dx + c0) as usize;
                let s = &src[so..so + len];
                d.iter_mut().zip(s).for_each(|(a, b)| *a += w * b);
            }
        }
    }
}

/// Adjoint of [`accumulate_correlate`]: `dst[r+ky−1, c+kx−1] += k·src[r,c]`.
fn accumulate_convolve(dst: &mut [f64], src: &[f64], k: &[f64], n: usize) {
    let n_i = n as isize;
    for ky in 0..K {
        for kx in 0..K {
            let w = k[ky * K + kx];
            if w == 0.0 {
                continue;
            }
            let (dy, dx) = (ky as isize - 1, kx as isize - 1);
            let (r0, r1) = (0.max(-dy), n_i.min(n_i - dy));
            let (c0, c1) = (0.max(-dx), n_i.min(n_i - dx));
            let len = (c1 - c0) as usize;
            for r in r0..r1 {
                let so = (r * n_i + c0) as usize;
                let s = &src[so..so + len];
                let d0 = ((r + dy) * n_i + dx + c0) as usize;
                let d = &mut dst[d0..d0 + len];
                d.iter_mut().zip(s).for_each(|(a, b)| *a += w * b);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    layers: Vec<ConvLayer>,
    budget: f64,
    skip_gain: f64,
    slope: f64,
    spectral_size: usize,
}

/// Activations kept from a forward pass for the reverse pass.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl DenoiserNet {
    /// Fan-in scaled uniform initialisation followed by spectral
    /// normalisation with `init_power_iters` steps per layer.
    pub fn new(cfg: &DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(cfg.seed, Purpose::Init, 0);
        let layers = cfg
            .channels
            .windows(2)
            .map(|w| {
                let (in_ch, out_ch) = (w[0], w[1]);
                let bound = 1.0 / ((in_ch * KK) as f64).sqrt();
                ConvLayer {
                    in_ch,
                    out_ch,
                    weight: (0..out_ch * in_ch * KK)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; out_ch],
                    u: Vec::new(),
                    sigma: 0.0,
                }
            })
            .collect();
        let mut net = Self {
            layers,
            budget: cfg.lipschitz_budget,
            skip_gain: cfg.skip_gain,
            slope: cfg.leaky_slope,
            spectral_size: cfg.spectral_size,
        };
        net.normalize_spectral_iters(cfg.init_power_iters.max(1));
        Ok(net)
    }

    /// All weights and biases zero.
    pub fn zeros(cfg: &DenoiserConfig) -> Result<Self> {
        let mut net = Self::new(cfg)?;
        for l in &mut net.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        Ok(net)
    }

    /// Rebuilds a network from stored parts; no validation of the budget
    /// against the weights is done.
    pub fn from_parts(
        layers: Vec<ConvLayer>,
        budget: f64,
        skip_gain: f64,
        slope: f64,
        spectral_size: usize,
    ) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].out_ch != w[1].in_ch {
                return Err(Error::Dimension("layer channel counts do not chain".into()));
            }
        }
        for l in &layers {
            if l.weight.len() != l.out_ch * l.in_ch * KK || l.bias.len() != l.out_ch {
                return Err(Error::Dimension("layer parameter sizes are inconsistent".into()));
            }
        }
        if layers.first().map(|l| l.in_ch) != Some(1) || layers.last().map(|l| l.out_ch) != Some(1) {
            return Err(Error::Dimension("denoiser must map one channel to one channel".into()));
        }
        Ok(Self {
            layers,
            budget,
            skip_gain,
            slope,
            spectral_size,
        })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn lipschitz_budget(&self) -> f64 {
        self.budget
    }

    pub fn skip_gain(&self) -> f64 {
        self.skip_gain
    }

    pub fn set_skip_gain(&mut self, g: f64) {
        self.skip_gain = g;
    }

    pub fn leaky_slope(&self) -> f64 {
        self.slope
    }

    pub fn spectral_size(&self) -> usize {
        self.spectral_size
    }

    /// Per-layer norm cap `(budget − skip)^(1/L)`.
    pub fn layer_cap(&self) -> f64 {
        (self.budget - self.skip_gain)
            .max(0.0)
            .powf(1.0 / self.layers.len() as f64)
    }

    /// Upper estimate of the Lipschitz constant from the stored per-layer
    /// norm estimates.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.skip_gain + self.layers.iter().map(|l| l.sigma).product::<f64>()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::n_params).sum()
    }

    /// Weights then bias for each layer, in order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// One power-iteration step per layer, then rescales any layer whose
    /// estimated norm exceeds [`layer_cap`](Self::layer_cap). Layers under
    /// the cap are left alone.
    pub fn normalize_spectral(&mut self) {
        self.normalize_spectral_iters(1);
    }

    pub fn normalize_spectral_iters(&mut self, iters: usize) {
        let cap = self.layer_cap();
        let n = self.spectral_size;
        for l in &mut self.layers {
            let mut sigma = 0.0;
            for _ in 0..iters.max(1) {
                sigma = l.power_step(n);
            }
            if sigma > cap {
                let f = cap / sigma;
                l.weight.iter_mut().for_each(|w| *w *= f);
                l.sigma = cap;
            }
        }
    }

    fn activate(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .map(|&v| if v >= 0.0 { v } else { self.slope * v })
            .collect()
    }

    fn run(&self, v: &[f64], n: usize, keep: bool) -> (Vec<f64>, Option<Trace>) {
        let mut trace = keep.then(|| Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        });
        let mut a = v.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let z = l.conv(&a, n, true);
            let next = if li < last { self.activate(&z) } else { z.clone() };
            if let Some(t) = trace.as_mut() {
                t.inputs.push(std::mem::replace(&mut a, next));
                t.pre.push(z);
            } else {
                a = next;
            }
        }
        if self.skip_gain != 0.0 {
            a.iter_mut()
                .zip(v)
                .for_each(|(o, x)| *o += self.skip_gain * x);
        }
        (a, trace)
    }

    pub fn forward(&self, v: &Image) -> Image {
        let (out, _) = self.run(v.data(), v.size(), false);
        Image::from_vec(v.size(), out).expect("shape preserved")
    }

    /// Reverse-mode derivative at `v` applied to `cotangent`: returns the
    /// parameter gradient (ordered as [`params`](Self::params)) and the input
    /// gradient.
    pub fn vjp(&self, v: &Image, cotangent: &Image) -> Result<(Vec<f64>, Image)> {
        if v.size() != cotangent.size() {
            return Err(Error::Dimension("cotangent shape differs from input".into()));
        }
        let n = v.size();
        let (_, trace) = self.run(v.data(), n, true);
        let trace = trace.expect("trace requested");
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut g = cotangent.data().to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            grads.push(l.param_grads(&trace.inputs[li], &g, n));
            let mut ga = l.conv_transpose(&g, n);
            if li > 0 {
                ga.iter_mut()
                    .zip(&trace.pre[li - 1])
                    .for_each(|(gi, &z)| {
                        if z < 0.0 {
                            *gi *= self.slope
                        }
                    });
            }
            g = ga;
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (w, b) in grads {
            flat.extend(w);
            flat.extend(b);
        }
        if self.skip_gain != 0.0 {
            g.iter_mut()
                .zip(cotangent.data())
                .for_each(|(gi, c)| *gi += self.skip_gain * c);
        }
        Ok((flat, Image::from_vec(n, g)?))
    }
}

/// `Ω`: projection onto `[0,1]ⁿ`, or the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Omega {
    #[default]
    Clamp,
    Identity,
}

impl Omega {
    pub fn apply(self, x: &Image) -> Image {
        match self {
            Omega::Clamp => omega_project(x),
            Omega::Identity => x.clone(),
        }
    }

    /// Derivative of `Ω` at `u` (0 or 1 per pixel; boundary points count
    /// as inside).
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Omega::Clamp => {
                if (0.0..=1.0).contains(&u) {
                    1.0
                } else {
                    0.0
                }
            }
            Omega::Identity => 1.0,
        }
    }
}

/// Elementwise clamp to `[0, 1]`.
pub fn omega_project(x: &Image) -> Image {
    x.clamp01()
}
