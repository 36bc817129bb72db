//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 8         | magic `HYDRATNS`                        |
//! | 8      | 1         | format version (1)                      |
//! | 9      | 1         | dtype: 0 = f32, 1 = f64                 |
//! | 10     | 1         | rank                                    |
//! | 11     | 5         | zero padding                            |
//! | 16     | 8 × rank  | dims as u64                             |
//! | …      | …         | row-major payload                       |
//!
//! A rank-0 tensor is a scalar with one element.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HYDRATNS";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            t => Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Self {
            shape,
            data: TensorData::F32(data),
        })
    }

    pub fn new_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Self {
            shape,
            data: TensorData::F64(data),
        })
    }

    /// Narrows `data` to the 32-bit storage type used for datasets.
    ///
    /// Panics if `data.len()` does not match `shape`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Self::new_f32(shape, data.iter().map(|&v| v as f32).collect())
            .expect("tensor length matches shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.shape.len() + 8 * self.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0u8; 5]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes[8] != VERSION {
            return Err(Error::Format(format!(
                "version mismatch: file has {}, reader supports {VERSION}",
                bytes[8]
            )));
        }
        let dtype = DType::from_tag(bytes[9])?;
        let rank = bytes[10] as usize;
        let dims_end = HEADER_LEN + 8 * rank;
        if bytes.len() < dims_end {
            return Err(Error::Format("truncated shape block".into()));
        }
        let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .map(|d| usize::try_from(d).map_err(|_| Error::Format("dimension overflows usize".into())))
            .collect::<Result<_>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("shape overflow".into()))?;
        let payload_len = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::Format("shape overflow".into()))?;
        let payload = &bytes[dims_end..];
        if payload.len() != payload_len {
            return Err(Error::Format(format!(
                "payload is {} bytes, shape {shape:?} needs {payload_len}",
                payload.len()
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { shape, data })
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("shape overflow".into()))?;
    if count != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} holds {count} values, got {len}"
        )));
    }
    Ok(())
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}
