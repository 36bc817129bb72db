//! Denoiser checkpoints: one tensor file per parameter plus `index.json`.
//!
//! Parameters and optimizer moments are stored as 64-bit tensors so that a
//! resumed run continues bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{ConvLayer, DenoiserNet};
use crate::error::{Error, Result};
use crate::layer::LayerConfig;
use crate::radon::Geometry;
use crate::tensor_io::{load_tensor, save_tensor, Tensor};

pub const INDEX_FILE: &str = "index.json";
pub const BEST_MARKER: &str = "BEST";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub sigma: f64,
}

/// Optimizer and stopping state carried across a resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub adam_t: u64,
    pub best_metric: Option<f64>,
    pub best_step: Option<u64>,
    pub patience_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub format_version: u32,
    pub step: u64,
    /// Training mode label (`hydra`, `plain`, `tv`).
    pub mode: String,
    pub layers: Vec<LayerShape>,
    pub lipschitz_budget: f64,
    pub skip_gain: f64,
    pub leaky_slope: f64,
    pub spectral_size: usize,
    pub geometry: Geometry,
    pub norm_sq: f64,
    pub layer_config: LayerConfig,
    pub stop_metric_db: Option<f64>,
    pub trainer: Option<TrainerState>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub net: DenoiserNet,
    /// Adam first and second moments, if saved.
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn checkpoint_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("ckpt_{step}"))
}

fn param_file(layer: usize, what: &str) -> String {
    format!("layer{layer}_{what}.tns")
}

fn save_vec(dir: &Path, name: &str, shape: Vec<usize>, data: &[f64]) -> Result<()> {
    save_tensor(&dir.join(name), &Tensor::new_f64(shape, data.to_vec())?)
}

fn load_vec(dir: &Path, name: &str, expected: usize) -> Result<Vec<f64>> {
    let path = dir.join(name);
    let t = load_tensor(&path)?;
    let v = t.to_f64();
    if v.len() != expected {
        return Err(Error::Integrity {
            path,
            reason: format!("expected {expected} values, found {}", v.len()),
        });
    }
    Ok(v)
}

impl Checkpoint {
    /// Writes into `dir`, which is created (and may already exist).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, l) in self.net.layers().iter().enumerate() {
            save_vec(dir, &param_file(i, "weight"), vec![l.out_ch, l.in_ch, 3, 3], &l.weight)?;
            save_vec(dir, &param_file(i, "bias"), vec![l.out_ch], &l.bias)?;
            save_vec(dir, &param_file(i, "u"), vec![l.u.len()], &l.u)?;
        }
        if let Some((m, v)) = &self.moments {
            save_vec(dir, "adam_m.tns", vec![m.len()], m)?;
            save_vec(dir, "adam_v.tns", vec![v.len()], v)?;
        }
        let path = dir.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&self.index).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} is not supported",
                index.format_version
            )));
        }
        let mut layers = Vec::with_capacity(index.layers.len());
        for (i, s) in index.layers.iter().enumerate() {
            let weight = load_vec(dir, &param_file(i, "weight"), s.out_ch * s.in_ch * 9)?;
            let bias = load_vec(dir, &param_file(i, "bias"), s.out_ch)?;
            let upath = dir.join(param_file(i, "u"));
            let u = load_tensor(&upath)?.to_f64();
            layers.push(ConvLayer {
                in_ch: s.in_ch,
                out_ch: s.out_ch,
                weight,
                bias,
                u,
                sigma: s.sigma,
            });
        }
        let net = DenoiserNet::from_parts(
            layers,
            index.lipschitz_budget,
            index.skip_gain,
            index.leaky_slope,
            index.spectral_size,
        )?;
        let moments = if dir.join("adam_m.tns").exists() {
            let n = net.n_params();
            Some((load_vec(dir, "adam_m.tns", n)?, load_vec(dir, "adam_v.tns", n)?))
        } else {
            None
        };
        Ok(Self { index, net, moments })
    }

    pub fn layer_shapes(net: &DenoiserNet) -> Vec<LayerShape> {
        net.layers()
            .iter()
            .map(|l| LayerShape {
                in_ch: l.in_ch,
                out_ch: l.out_ch,
                sigma: l.sigma,
            })
            .collect()
    }
}

/// Records `step` as the best checkpoint under `root`.
pub fn mark_best(root: &Path, step: u64) -> Result<()> {
    let path = root.join(BEST_MARKER);
    fs::write(&path, format!("ckpt_{step}\n")).map_err(|e| Error::io(&path, e))
}

/// Directory named by the `BEST` marker under `root`.
pub fn best_checkpoint(root: &Path) -> Result<PathBuf> {
    let path = root.join(BEST_MARKER);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let name = text.trim();
    if !name.starts_with("ckpt_") || name.contains(['/', '\\']) {
        return Err(Error::Format(format!("malformed BEST marker: {name:?}")));
    }
    Ok(root.join(name))
}

/// All `ckpt_<step>` directories under `root`, sorted by step.
pub fn list_checkpoints(root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        let Some(step) = name
            .to_str()
            .and_then(|s| s.strip_prefix("ckpt_"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if entry.path().join(INDEX_FILE).is_file() {
            out.push((step, entry.path()));
        }
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}
