//! Matrix-free parallel-beam Radon transform.
//!
//! The projector is Joseph's method: each ray is sampled once per image row
//! (or column, for rays closer to horizontal) with linear interpolation
//! between the two nearest pixel centres, weighted by the path length per
//! row. Forward and adjoint walk the same stencil, so the adjoint is the
//! exact transpose of the forward map.
//!
//! Coordinates: pixel `(row, col)` has centre `x = col − c`, `y = c − row`
//! with `c = (N − 1)/2`. A ray at angle `θ` and detector offset `t` is the
//! line `x·cosθ + y·sinθ = t`. Detector offsets are in pixels, but path
//! lengths are measured with the image spanning `[−1, 1]²`, the phantom
//! field of view, so each pixel has width `2/N`.

use serde::{Deserialize, Serialize};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, LinearMap};
use crate::par;

/// Serializable description of a sparse-view acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub image_size: usize,
    /// Size of the equispaced full angle set over `[0, π)`.
    pub n_angles_full: usize,
    /// Number of retained views, strided uniformly through the full set.
    pub n_views: usize,
    pub n_detectors: usize,
    /// Detector bin width in pixels.
    pub detector_spacing: f64,
}

impl Geometry {
    /// Detectors match the image side, full set of 384 angles.
    pub fn sparse(image_size: usize, n_views: usize) -> Self {
        Self {
            image_size,
            n_angles_full: 384,
            n_views,
            n_detectors: image_size,
            detector_spacing: 1.0,
        }
    }

    pub fn full_angles(&self) -> Vec<f64> {
        equispaced_angles(self.n_angles_full)
    }

    /// Uniformly strided subset of `n_views` indices out of `n_angles_full`.
    pub fn view_mask(&self) -> Vec<usize> {
        strided_mask(self.n_angles_full, self.n_views)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.n_detectors == 0 {
            return Err(Error::Config("image_size and n_detectors must be positive".into()));
        }
        if self.n_views == 0 || self.n_views > self.n_angles_full {
            return Err(Error::Config(format!(
                "n_views must be in 1..={}, got {}",
                self.n_angles_full, self.n_views
            )));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return Err(Error::Config("detector_spacing must be positive".into()));
        }
        Ok(())
    }
}

/// `n` angles `kπ/n`, `k = 0..n`.
pub fn equispaced_angles(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| k as f64 * std::f64::consts::PI / n as f64)
        .collect()
}

/// Indices `⌊k·full/m⌋` for `k = 0..m`; an exact stride when `m` divides `full`.
pub fn strided_mask(full: usize, m: usize) -> Vec<usize> {
    (0..m).map(|k| k * full / m).collect()
}

#[derive(Debug, Clone)]
pub struct RadonOperator {
    image_size: usize,
    angles: Vec<f64>,
    n_detectors: usize,
    detector_spacing: f64,
    mask: Vec<usize>,
    /// `(cos, sin)` of the retained angles, in mask order.
    trig: Vec<(f64, f64)>,
    norm_sq: Option<f64>,
}

impl RadonOperator {
    /// Full operator over `angles` (strictly increasing in `[0, π)`).
    pub fn new(
        image_size: usize,
        angles: Vec<f64>,
        n_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        if image_size == 0 || n_detectors == 0 || angles.is_empty() {
            return Err(Error::Config(
                "image_size, n_detectors and the angle set must be non-empty".into(),
            ));
        }
        if !(detector_spacing > 0.0 && detector_spacing.is_finite()) {
            return Err(Error::Config("detector_spacing must be positive".into()));
        }
        if angles
            .iter()
            .any(|a| !(0.0..std::f64::consts::PI).contains(a))
            || angles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "angles must be strictly increasing in [0, π)".into(),
            ));
        }
        let mask: Vec<usize> = (0..angles.len()).collect();
        let mut op = Self {
            image_size,
            angles,
            n_detectors,
            detector_spacing,
            mask,
            trig: Vec::new(),
            norm_sq: None,
        };
        op.refresh_trig();
        Ok(op)
    }

    pub fn from_geometry(g: &Geometry) -> Result<Self> {
        g.validate()?;
        Self::new(g.image_size, g.full_angles(), g.n_detectors, g.detector_spacing)?
            .with_mask(g.view_mask())
    }

    /// Restricts the operator to the angle indices in `mask` (sorted, unique).
    pub fn with_mask(mut self, mask: Vec<usize>) -> Result<Self> {
        if mask.is_empty()
            || mask.windows(2).any(|w| w[0] >= w[1])
            || mask.last().is_some_and(|&m| m >= self.angles.len())
        {
            return Err(Error::Config(
                "mask must be a non-empty increasing subset of angle indices".into(),
            ));
        }
        self.mask = mask;
        self.norm_sq = None;
        self.refresh_trig();
        Ok(self)
    }

    /// Same geometry with every angle retained.
    pub fn unmasked(&self) -> Self {
        let mut op = self.clone();
        op.mask = (0..op.angles.len()).collect();
        op.norm_sq = None;
        op.refresh_trig();
        op
    }

    fn refresh_trig(&mut self) {
        self.trig = self
            .mask
            .iter()
            .map(|&i| (self.angles[i].cos(), self.angles[i].sin()))
            .collect();
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    /// Number of retained projection angles.
    pub fn n_views(&self) -> usize {
        self.mask.len()
    }

    pub fn norm_sq(&self) -> Option<f64> {
        self.norm_sq
    }

    pub fn require_norm_sq(&self) -> Result<f64> {
        self.norm_sq
            .ok_or_else(|| Error::Config("operator norm has not been estimated".into()))
    }

    pub fn set_norm_sq(&mut self, v: f64) {
        self.norm_sq = Some(v);
    }

    /// Power iteration on `AᵀA`; caches and returns the `‖A‖²` estimate.
    pub fn estimate_operator_norm(&mut self, iters: usize, seed: u64) -> f64 {
        let est = power_iteration(self, iters, seed);
        self.norm_sq = Some(est);
        est
    }

    /// Pixel width in field-of-view units, `2/N`.
    pub fn pixel_size(&self) -> f64 {
        2.0 / self.image_size as f64
    }

    fn detector_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Visits every `(pixel index, weight)` pair on the ray for detector `k`
    /// at the angle with the given `(cos, sin)`.
    #[inline]
    fn ray_stencil(&self, (cos, sin): (f64, f64), k: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.image_size;
        let c = (n as f64 - 1.0) / 2.0;
        let t = self.detector_offset(k);
        if cos.abs() >= sin.abs() {
            let step = self.pixel_size() / cos.abs();
            for row in 0..n {
                let y = c - row as f64;
                let xc = (t - y * sin) / cos + c;
                let j0 = xc.floor();
                if j0 < -1.0 || j0 >= n as f64 {
                    continue;
                }
                let w = xc - j0;
                let j0 = j0 as isize;
                let base = row * n;
                if j0 >= 0 {
                    f(base + j0 as usize, (1.0 - w) * step);
                }
                if j0 + 1 < n as isize {
                    f(base + (j0 + 1) as usize, w * step);
                }
            }
        } else {
            let step = self.pixel_size() / sin.abs();
            for col in 0..n {
                let x = col as f64 - c;
                let rc = c - (t - x * cos) / sin;
                let i0 = rc.floor();
                if i0 < -1.0 || i0 >= n as f64 {
                    continue;
                }
                let w = rc - i0;
                let i0 = i0 as isize;
                if i0 >= 0 {
                    f(i0 as usize * n + col, (1.0 - w) * step);
                }
                if i0 + 1 < n as isize {
                    f((i0 + 1) as usize * n + col, w * step);
                }
            }
        }
    }

    fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let nd = self.n_detectors;
        let mut out = vec![0.0; self.trig.len() * nd];
        par::for_each_chunk_mut(&mut out, nd, |a, row| {
            let cs = self.trig[a];
            for (k, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                self.ray_stencil(cs, k, |idx, w| acc += w * x[idx]);
                *v = acc;
            }
        });
        out
    }

    fn adjoint_raw(&self, s: &[f64]) -> Vec<f64> {
        const GROUPS: usize = 8;
        let nd = self.n_detectors;
        let n_angles = self.trig.len();
        let npix = self.image_size * self.image_size;
        let groups = GROUPS.min(n_angles);
        let partials = par::map_range(groups, |g| {
            let mut img = vec![0.0; npix];
            for a in (g..n_angles).step_by(groups) {
                let cs = self.trig[a];
                let row = &s[a * nd..(a + 1) * nd];
                for (k, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        self.ray_stencil(cs, k, |idx, w| img[idx] += w * v);
                    }
                }
            }
            img
        });
        let mut iter = partials.into_iter();
        let mut out = iter.next().unwrap_or_else(|| vec![0.0; npix]);
        for p in iter {
            out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Masked line integrals `M A x`.
    pub fn forward(&self, x: &Image) -> Result<Sinogram> {
        x.check_size(self.image_size)?;
        Sinogram::from_vec(self.n_views(), self.n_detectors, self.forward_raw(x.data()))
    }

    /// Exact transpose of [`forward`](Self::forward).
    pub fn adjoint(&self, s: &Sinogram) -> Result<Image> {
        self.check_sinogram(s)?;
        Image::from_vec(self.image_size, self.adjoint_raw(s.data()))
    }

    pub fn check_sinogram(&self, s: &Sinogram) -> Result<()> {
        if s.n_angles() != self.n_views() || s.n_detectors() != self.n_detectors {
            return Err(Error::Dimension(format!(
                "sinogram {}x{} does not match geometry {}x{}",
                s.n_angles(),
                s.n_detectors(),
                self.n_views(),
                self.n_detectors
            )));
        }
        Ok(())
    }

    /// Selects this operator's retained rows from a sinogram of the full
    /// angle set.
    pub fn select_views(&self, full: &Sinogram) -> Result<Sinogram> {
        if full.n_angles() != self.angles.len() || full.n_detectors() != self.n_detectors {
            return Err(Error::Dimension(
                "expected a sinogram over the full angle set".into(),
            ));
        }
        let data = self
            .mask
            .iter()
            .flat_map(|&a| full.row(a).iter().copied())
            .collect();
        Sinogram::from_vec(self.n_views(), self.n_detectors, data)
    }

    /// The mask as a diagonal 0/1 operator on full-angle sinograms: rows
    /// outside the mask are zeroed.
    pub fn zero_unretained(&self, full: &Sinogram) -> Result<Sinogram> {
        if full.n_angles() != self.angles.len() || full.n_detectors() != self.n_detectors {
            return Err(Error::Dimension(
                "expected a sinogram over the full angle set".into(),
            ));
        }
        let mut out = Sinogram::zeros(full.n_angles(), full.n_detectors());
        let nd = self.n_detectors;
        for &a in &self.mask {
            out.data_mut()[a * nd..(a + 1) * nd].copy_from_slice(full.row(a));
        }
        Ok(out)
    }

    /// `x − 2s·Aᵀ(Ax − y)`
    pub fn gradient_map(&self, x: &Image, y: &Sinogram, step: f64) -> Result<Image> {
        let mut r = self.forward(x)?;
        self.check_sinogram(y)?;
        r.data_mut()
            .iter_mut()
            .zip(y.data())
            .for_each(|(a, b)| *a -= b);
        let g = self.adjoint(&r)?;
        let data = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(xi, gi)| xi - 2.0 * step * gi)
            .collect();
        Image::from_vec(self.image_size, data)
    }

    /// Materialises the masked operator as a dense row-major matrix.
    /// Intended for small sizes.
    pub fn to_dense(&self) -> crate::linalg::DenseMatrix {
        let n = self.image_size * self.image_size;
        let m = self.n_views() * self.n_detectors;
        let mut data = vec![0.0; m * n];
        for (a, &cs) in self.trig.iter().enumerate() {
            for k in 0..self.n_detectors {
                let r = a * self.n_detectors + k;
                self.ray_stencil(cs, k, |idx, w| data[r * n + idx] += w);
            }
        }
        crate::linalg::DenseMatrix {
            rows: m,
            cols: n,
            data,
        }
    }
}

impl LinearMap for RadonOperator {
    fn domain_len(&self) -> usize {
        self.image_size * self.image_size
    }

    fn range_len(&self) -> usize {
        self.n_views() * self.n_detectors
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward_raw(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.adjoint_raw(y)
    }
}
