//! Random ellipse phantoms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Image;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub size: usize,
    /// Inclusive range for the number of ellipses.
    pub n_ellipses: [usize; 2],
    /// Additive intensity range for each ellipse, before clamping.
    pub intensity_range: [f64; 2],
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_ellipses: [4, 10],
            intensity_range: [-0.5, 0.5],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Phantom number `index` of the family described by `cfg`.
///
/// The first ellipse is a large body with positive intensity; the rest are
/// smaller features with intensities drawn from `intensity_range`. Every
/// ellipse lies inside the unit disk, the sum is clamped to `[0, 1]`, and
/// pixels outside the inscribed circle are zero.
pub fn gen_phantom(cfg: &PhantomConfig, index: u64) -> Image {
    let n = cfg.size;
    let mut rng = rng::stream(cfg.seed, Purpose::Phantom, index);
    let [lo_count, hi_count] = cfg.n_ellipses;
    let count = if hi_count > lo_count {
        rng.random_range(lo_count..=hi_count)
    } else {
        lo_count
    };
    let [lo, hi] = cfg.intensity_range;
    let mut ellipses = Vec::with_capacity(count);
    for k in 0..count {
        let e = if k == 0 {
            let a = rng.random_range(0.6..0.8);
            let b = rng.random_range(0.5..0.75);
            let top = hi.max(lo.abs()).max(1e-3);
            Ellipse {
                cx: rng.random_range(-0.08..0.08),
                cy: rng.random_range(-0.08..0.08),
                a,
                b,
                angle: rng.random_range(0.0..std::f64::consts::PI),
                value: rng.random_range(0.4 * top..top),
            }
        } else {
            let rho = rng.random_range(0.0..0.6f64);
            let phi = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let room = 0.9 - rho;
            let a = rng.random_range(0.04..0.3f64).min(room);
            let b = rng.random_range(0.04..0.3f64).min(room);
            Ellipse {
                cx: rho * phi.cos(),
                cy: rho * phi.sin(),
                a,
                b,
                angle: rng.random_range(0.0..std::f64::consts::PI),
                value: if hi > lo { rng.random_range(lo..hi) } else { lo },
            }
        };
        ellipses.push(e);
    }
    let c = (n as f64 - 1.0) / 2.0;
    let half = n as f64 / 2.0;
    Image::from_fn(n, |i, j| {
        let x = (j as f64 - c) / half;
        let y = (c - i as f64) / half;
        if x * x + y * y > 1.0 {
            return 0.0;
        }
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    })
}

/// Whether pixel `(i, j)` of an `n×n` grid lies inside the inscribed circle.
pub fn in_field_of_view(n: usize, i: usize, j: usize) -> bool {
    let c = (n as f64 - 1.0) / 2.0;
    let half = n as f64 / 2.0;
    let x = (j as f64 - c) / half;
    let y = (c - i as f64) / half;
    x * x + y * y <= 1.0
}
