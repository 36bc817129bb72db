//! Image quality metrics.

use serde::{Deserialize, Serialize};

use crate::array::Image;
use crate::error::{Error, Result};

/// Value reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::Dimension(format!(
            "image sides differ: {} vs {}",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    check_same(x, reference)?;
    Ok(x.data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

/// `10·log10(range² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, reference: &Image, range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::Domain(format!("psnr range must be positive, got {range}")));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (range * range / m).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a square `n×n` buffer.
fn filter_valid(src: &[f64], n: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let m = n - w + 1;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        let line = &src[r * n..(r + 1) * n];
        for c in 0..m {
            rows[r * m + c] = taps.iter().zip(&line[c..c + w]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[(r + k) * m + c];
            }
            out[r * m + c] = acc;
        }
    }
    out
}

/// Mean structural similarity over all valid window positions, Gaussian
/// weighted.
pub fn ssim(x: &Image, reference: &Image, cfg: &SsimConfig) -> Result<f64> {
    check_same(x, reference)?;
    let n = x.size();
    if n < cfg.window || cfg.window == 0 {
        return Err(Error::Dimension(format!(
            "image side {n} is smaller than the ssim window {}",
            cfg.window
        )));
    }
    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let a = x.data();
    let b = reference.data();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(u, v)| u * v).collect();
    let mu_a = filter_valid(a, n, &taps);
    let mu_b = filter_valid(b, n, &taps);
    let e_aa = filter_valid(&aa, n, &taps);
    let e_bb = filter_valid(&bb, n, &taps);
    let e_ab = filter_valid(&ab, n, &taps);
    let c1 = (cfg.k1 * cfg.range).powi(2);
    let c2 = (cfg.k2 * cfg.range).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            ssim_at(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2)
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Local SSIM from first and second moments.
#[inline]
pub fn ssim_at(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64, c1: f64, c2: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Image {
        let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Test, 0);
        Image::from_fn(n, |_, _| rng.random())
    }

    #[test]
    fn psnr_anchors() {
        let r = random(16, 1);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), PSNR_CAP_DB);
        // Offsets are exactly representable so MSE is exact.
        let x = Image::from_vec(4, vec![0.5; 16]).unwrap();
        let x1 = Image::from_vec(4, vec![0.5 + 0.1; 16]).unwrap();
        let p = psnr(&x1, &x, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        let x2 = Image::from_vec(4, vec![0.5 + 0.01; 16]).unwrap();
        let p = psnr(&x2, &x, 1.0).unwrap();
        assert!((p - 40.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random(12, 2);
        let b = random(12, 3);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_rejects_bad_inputs() {
        assert!(psnr(&Image::zeros(4), &Image::zeros(5), 1.0).is_err());
        assert!(psnr(&Image::zeros(4), &Image::zeros(4), 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random(32, 4);
        let b = random(32, 5);
        let cfg = SsimConfig::default();
        assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
    }

    #[test]
    fn inverted_checkerboard_is_anticorrelated() {
        let a = Image::from_fn(32, |i, j| ((i / 2 + j / 2) % 2) as f64);
        let b = Image::from_fn(32, |i, j| 1.0 - a.get(i, j));
        let s = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn ssim_window_larger_than_image() {
        let a = Image::zeros(8);
        assert!(matches!(ssim(&a, &a, &SsimConfig::default()), Err(Error::Dimension(_))));
    }
}
