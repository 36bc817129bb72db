//! The unified run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use hydra_core::dataset::{DatasetManifest, PhantomSource, SplitSizes};
use hydra_core::eval::EvalConfig;
use hydra_core::phantom::PhantomConfig;
use hydra_core::sweep::SweepConfig;
use hydra_core::training::TrainConfig;
use hydra_core::{Error, Geometry, Result};
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub image_size: usize,
    pub n_views: usize,
    pub n_angles_full: usize,
    /// Defaults to the image side.
    pub n_detectors: Option<usize>,
    pub detector_spacing: f64,
    pub n_phantoms: usize,
    /// Explicit split sizes; 70/15/15 of `n_phantoms` when absent.
    pub splits: Option<SplitSizes>,
    pub photons_per_bin: f64,
    /// Defaults to the dataset default.
    pub attenuation_scale: Option<f64>,
    pub phantom: PhantomConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_views: 32,
            n_angles_full: 384,
            n_detectors: None,
            detector_spacing: 1.0,
            n_phantoms: 200,
            splits: None,
            photons_per_bin: 1000.0,
            attenuation_scale: None,
            phantom: PhantomConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            image_size: self.image_size,
            n_angles_full: self.n_angles_full,
            n_views: self.n_views,
            n_detectors: self.n_detectors.unwrap_or(self.image_size),
            detector_spacing: self.detector_spacing,
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        self.splits.unwrap_or_else(|| SplitSizes::ratio_70_15_15(self.n_phantoms))
    }

    pub fn manifest(&self, seed: u64) -> DatasetManifest {
        let mut m = DatasetManifest::synthetic(self.geometry(), self.split_sizes(), seed);
        m.photons_per_bin = self.photons_per_bin;
        if let Some(a) = self.attenuation_scale {
            m.attenuation_scale = a;
        }
        m.phantoms = PhantomSource::Synthetic(PhantomConfig {
            size: self.image_size,
            seed,
            ..self.phantom.clone()
        });
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; copied into every nested seed.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            output_dir: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        };
        c.propagate();
        c
    }
}

impl RunConfig {
    /// Reads `path`, or the defaults when `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.propagate();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Copies the master seed and shared sizes into nested sections.
    pub fn propagate(&mut self) {
        self.data.phantom.seed = self.seed;
        self.data.phantom.size = self.data.image_size;
        self.train.seed = self.seed;
        self.sweep.seed = self.seed;
        self.sweep.train.seed = self.seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Missing(format!("{}: {e}", dir.display())))?;
        let p = dir.join(ECHO_FILE);
        fs::write(&p, self.to_json()).map_err(|e| Error::Missing(format!("{}: {e}", p.display())))
    }
}
