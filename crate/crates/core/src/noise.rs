//! Photon-count measurement noise.

use rand_distr::{Distribution, Poisson};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::radon::RadonOperator;
use crate::rng::{self, Purpose};

/// Beer–Lambert corruption of post-log line integrals: counts
/// `c ~ Poisson(N₀·exp(−s))`, clamped to at least one photon, returned as
/// `−ln(c/N₀)`.
pub fn apply_poisson_noise(s: &Sinogram, photons_per_bin: f64, seed: u64) -> Result<Sinogram> {
    if !(photons_per_bin >= 1.0) {
        return Err(Error::Domain(format!(
            "photons_per_bin must be at least 1, got {photons_per_bin}"
        )));
    }
    if let Some(v) = s.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "line integrals must be nonnegative, found {v}"
        )));
    }
    let mut out = s.clone();
    let nd = s.n_detectors();
    // One stream per projection row.
    for (a, row) in out.data_mut().chunks_mut(nd).enumerate() {
        let mut rng = rng::stream(seed, Purpose::Noise, a as u64);
        for v in row {
            let lambda = photons_per_bin * (-*v).exp();
            let count = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map(|p| p.sample(&mut rng))
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            *v = -(count.max(1.0) / photons_per_bin).ln();
        }
    }
    Ok(out)
}

/// Clean and noisy measurements of `x`.
///
/// Line integrals are multiplied by `attenuation_scale`
/// (attenuation per unit length for a unit image value) before the photon model,
/// and divided by it afterwards, so both outputs live in the range of `op`.
pub fn simulate_measurement(
    op: &RadonOperator,
    x: &Image,
    photons_per_bin: f64,
    attenuation_scale: f64,
    seed: u64,
) -> Result<(Sinogram, Sinogram)> {
    if !(attenuation_scale > 0.0) {
        return Err(Error::Config("attenuation_scale must be positive".into()));
    }
    let clean = op.forward(x)?;
    let mut physical = clean.clone();
    physical
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v * attenuation_scale).max(0.0));
    let mut noisy = apply_poisson_noise(&physical, photons_per_bin, seed)?;
    noisy
        .data_mut()
        .iter_mut()
        .for_each(|v| *v /= attenuation_scale);
    Ok((clean, noisy))
}
