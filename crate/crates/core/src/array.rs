//! Image and sinogram grids.
//!
//! Both are dense row-major `f64` buffers. Images are square; sinograms are
//! indexed `[angle][detector]`.

use crate::error::{Error, Result};
use crate::tensor_io::Tensor;

/// A square image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_vec(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Dimension(format!(
                "image of side {size} needs {} values, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                data.push(f(r, c));
            }
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.size + col] = v;
    }

    pub fn clamp01(&self) -> Image {
        Image {
            size: self.size,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.size, self.size], &self.data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w] if h == w => Image::from_vec(*h, t.to_f64()),
            s => Err(Error::Dimension(format!(
                "expected a square 2-D tensor for an image, got shape {s:?}"
            ))),
        }
    }

    /// Writes an 8-bit grayscale PNG with `[0,1]` mapped linearly to `[0,255]`.
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.size as u32, self.size as u32, bytes)
            .expect("buffer length matches dimensions");
        img.save(path)?;
        Ok(())
    }

    pub fn check_size(&self, expected: usize) -> Result<()> {
        if self.size != expected {
            return Err(Error::Dimension(format!(
                "image side {} does not match expected {expected}",
                self.size
            )));
        }
        Ok(())
    }
}

/// Measured or simulated line integrals, `[angle][detector]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        Self {
            n_angles,
            n_detectors,
            data: vec![0.0; n_angles * n_detectors],
        }
    }

    pub fn from_vec(n_angles: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_detectors {
            return Err(Error::Dimension(format!(
                "sinogram {n_angles}x{n_detectors} needs {} values, got {}",
                n_angles * n_detectors,
                data.len()
            )));
        }
        Ok(Self {
            n_angles,
            n_detectors,
            data,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        &self.data[angle * self.n_detectors..(angle + 1) * self.n_detectors]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.n_angles, self.n_detectors], &self.data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [a, d] => Sinogram::from_vec(*a, *d, t.to_f64()),
            s => Err(Error::Dimension(format!(
                "expected a 2-D tensor for a sinogram, got shape {s:?}"
            ))),
        }
    }
}
