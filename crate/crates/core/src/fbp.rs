//! Filtered backprojection.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::par;
use crate::radon::RadonOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    RamLak,
    Hann,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpConfig {
    pub filter: FilterKind,
    /// Fraction of Nyquist in `(0, 1]` above which the filter is zero.
    pub cutoff: f64,
    /// Clamp the result to `[0, 1]`.
    pub clamp: bool,
}

impl Default for FbpConfig {
    fn default() -> Self {
        Self {
            filter: FilterKind::RamLak,
            cutoff: 1.0,
            clamp: false,
        }
    }
}

impl FbpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(Error::Config(format!(
                "fbp cutoff must lie in (0, 1], got {}",
                self.cutoff
            )));
        }
        Ok(())
    }
}

/// Frequency response of the band-limited ramp (Ram-Lak spatial kernel
/// `h(0) = 1/4`, `h(n odd) = −1/(π²n²)`) on a length-`len` FFT grid,
/// windowed per `cfg`.
fn filter_response(len: usize, cfg: &FbpConfig) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    kernel[0].re = 0.25;
    for n in (1..len / 2).step_by(2) {
        let v = -1.0 / (std::f64::consts::PI * n as f64).powi(2);
        kernel[n].re = v;
        kernel[len - n].re = v;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let nu = i.min(len - i) as f64 / (len as f64 / 2.0);
            let window = if nu > cfg.cutoff {
                0.0
            } else {
                match cfg.filter {
                    FilterKind::RamLak | FilterKind::None => 1.0,
                    FilterKind::Hann => 0.5 * (1.0 + (std::f64::consts::PI * nu / cfg.cutoff).cos()),
                }
            };
            h.re * window
        })
        .collect()
}

/// Applies the configured ramp filter along the detector axis of each row.
pub fn filter_sinogram(s: &Sinogram, cfg: &FbpConfig) -> Sinogram {
    if cfg.filter == FilterKind::None {
        return s.clone();
    }
    let nd = s.n_detectors();
    let len = (2 * nd).next_power_of_two();
    let response = filter_response(len, cfg);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut out = s.clone();
    par::for_each_chunk_mut(out.data_mut(), nd, |_, row| {
        let mut buf: Vec<Complex64> = row
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(len)
            .collect();
        fwd.process(&mut buf);
        buf.iter_mut().zip(&response).for_each(|(b, h)| *b *= h);
        inv.process(&mut buf);
        for (r, b) in row.iter_mut().zip(&buf) {
            *r = b.re / len as f64;
        }
    });
    out
}

/// `(π / (n_views·h²)) · Aᵀ(F y)` with `h` the pixel width. The detector
/// spacing cancels between the filter and the backprojection.
pub fn fbp(op: &RadonOperator, s: &Sinogram, cfg: &FbpConfig) -> Result<Image> {
    cfg.validate()?;
    op.check_sinogram(s)?;
    let filtered = filter_sinogram(s, cfg);
    let mut img = op.adjoint(&filtered)?;
    let scale = std::f64::consts::PI / (op.n_views() as f64 * op.pixel_size().powi(2));
    img.data_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(if cfg.clamp { img.clamp01() } else { img })
}
