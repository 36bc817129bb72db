//! Synthetic sparse-view datasets on disk.
//!
//! A dataset directory holds `manifest.json` plus one sub-directory per
//! split. Each sample has three tensor files: the phantom (evaluation only),
//! the clean sinogram and the noisy sinogram. The manifest records a SHA-256
//! digest for every file; loaders verify the digest of each file they read.
//!
//! Training code only ever sees a [`MeasurementSet`], which is built from
//! the noisy sinograms alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{Image, Sinogram};
use crate::error::{Error, Result};
use crate::noise::simulate_measurement;
use crate::par;
use crate::phantom::{gen_phantom, PhantomConfig};
use crate::radon::{Geometry, RadonOperator};
use crate::rng::{derive_seed, Purpose};
use crate::tensor_io::{load_tensor, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 70/15/15 split of `total` samples.
    pub fn ratio_70_15_15(total: usize) -> Self {
        let val = total * 15 / 100;
        let test = total * 15 / 100;
        Self {
            train: total - val - test,
            val,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn split_of(&self, id: usize) -> Split {
        if id < self.train {
            Split::Train
        } else if id < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Where the ground-truth images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PhantomSource {
    Synthetic(PhantomConfig),
    /// Externally prepared square slices in the tensor format, one file per
    /// sample, used in order.
    Slices { files: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Relative to the dataset root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: u64,
    pub split: Split,
    pub phantom: FileRef,
    pub clean: FileRef,
    pub noisy: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub geometry: Geometry,
    pub photons_per_bin: f64,
    /// Attenuation per unit length for a unit image value.
    pub attenuation_scale: f64,
    pub seed: u64,
    pub splits: SplitSizes,
    pub phantoms: PhantomSource,
    #[serde(default)]
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    /// Synthetic dataset with the given geometry and split sizes, 1000
    /// photons per bin.
    pub fn synthetic(geometry: Geometry, splits: SplitSizes, seed: u64) -> Self {
        let phantom = PhantomConfig {
            size: geometry.image_size,
            seed,
            ..Default::default()
        };
        Self {
            format_version: FORMAT_VERSION,
            attenuation_scale: DEFAULT_ATTENUATION_SCALE,
            geometry,
            photons_per_bin: 1000.0,
            seed,
            splits,
            phantoms: PhantomSource::Synthetic(phantom),
            samples: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest format {} not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.geometry.validate()?;
        if !(self.photons_per_bin >= 1.0) || !(self.attenuation_scale > 0.0) {
            return Err(Error::Config(
                "photons_per_bin must be ≥ 1 and attenuation_scale positive".into(),
            ));
        }
        if let PhantomSource::Synthetic(p) = &self.phantoms {
            if p.size != self.geometry.image_size {
                return Err(Error::Config(format!(
                    "phantom size {} differs from geometry image size {}",
                    p.size, self.geometry.image_size
                )));
            }
        }
        let mut ids: Vec<u64> = self.samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("sample ids must be unique across splits".into()));
        }
        Ok(())
    }
}

/// Attenuation per unit image value such that a unit-valued path across
/// the whole field of view integrates to 8.
pub const DEFAULT_ATTENUATION_SCALE: f64 = 4.0;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_tensor(root: &Path, rel: &str, t: &Tensor) -> Result<FileRef> {
    let bytes = t.to_bytes();
    let path = root.join(rel);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(FileRef {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn source_image(source: &PhantomSource, size: usize, id: u64) -> Result<Image> {
    match source {
        PhantomSource::Synthetic(cfg) => Ok(gen_phantom(cfg, id)),
        PhantomSource::Slices { files } => {
            let path = files.get(id as usize).ok_or_else(|| {
                Error::Missing(format!("no slice file for sample {id}"))
            })?;
            let img = Image::from_tensor(&load_tensor(path)?)?;
            img.check_size(size)?;
            Ok(img)
        }
    }
}

/// Generates every sample of `manifest` under `root` and writes the
/// completed manifest. Refuses to overwrite an existing dataset unless
/// `force` is set.
pub fn build_dataset(manifest: &DatasetManifest, root: &Path, force: bool) -> Result<DatasetManifest> {
    manifest.validate()?;
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::Exists(manifest_path));
    }
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let op = RadonOperator::from_geometry(&manifest.geometry)?;
    let size = manifest.geometry.image_size;
    let splits = manifest.splits;
    let samples = par::map_range(splits.total(), |idx| -> Result<SampleEntry> {
        let id = idx as u64;
        let split = splits.split_of(idx);
        let x = source_image(&manifest.phantoms, size, id)?;
        let noise_seed = derive_seed(manifest.seed, Purpose::Noise, id);
        let (clean, noisy) = simulate_measurement(
            &op,
            &x,
            manifest.photons_per_bin,
            manifest.attenuation_scale,
            noise_seed,
        )?;
        let dir = split.dir_name();
        Ok(SampleEntry {
            id,
            split,
            phantom: write_tensor(root, &format!("{dir}/phantom_{id:05}.tns"), &x.to_tensor())?,
            clean: write_tensor(root, &format!("{dir}/clean_{id:05}.tns"), &clean.to_tensor())?,
            noisy: write_tensor(root, &format!("{dir}/noisy_{id:05}.tns"), &noisy.to_tensor())?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = manifest.clone();
    out.samples = samples;
    let json = serde_json::to_string_pretty(&out).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(out)
}

/// Noisy measurements only; what training is allowed to see.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub train: Vec<Sinogram>,
    pub val: Vec<Sinogram>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        manifest.validate()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn operator(&self) -> Result<RadonOperator> {
        RadonOperator::from_geometry(&self.manifest.geometry)
    }

    pub fn samples(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.manifest.samples.iter().filter(move |s| s.split == split)
    }

    fn read_verified(&self, r: &FileRef) -> Result<Tensor> {
        let path = self.root.join(&r.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let digest = sha256_hex(&bytes);
        if digest != r.sha256 {
            return Err(Error::Integrity {
                path,
                reason: format!("sha256 {digest} does not match manifest {}", r.sha256),
            });
        }
        Tensor::from_bytes(&bytes)
    }

    fn sinogram(&self, r: &FileRef) -> Result<Sinogram> {
        let s = Sinogram::from_tensor(&self.read_verified(r)?)?;
        let g = &self.manifest.geometry;
        if s.n_angles() != g.n_views || s.n_detectors() != g.n_detectors {
            return Err(Error::Integrity {
                path: self.root.join(&r.path),
                reason: "sinogram shape does not match the manifest geometry".into(),
            });
        }
        Ok(s)
    }

    /// Noisy sinograms of a split, in id order.
    pub fn noisy(&self, split: Split) -> Result<Vec<(u64, Sinogram)>> {
        self.samples(split)
            .map(|s| Ok((s.id, self.sinogram(&s.noisy)?)))
            .collect()
    }

    pub fn clean(&self, split: Split) -> Result<Vec<(u64, Sinogram)>> {
        self.samples(split)
            .map(|s| Ok((s.id, self.sinogram(&s.clean)?)))
            .collect()
    }

    /// Ground-truth images; for evaluation and oracle selection only.
    pub fn phantoms(&self, split: Split) -> Result<Vec<(u64, Image)>> {
        self.samples(split)
            .map(|s| {
                let img = Image::from_tensor(&self.read_verified(&s.phantom)?)?;
                img.check_size(self.manifest.geometry.image_size)?;
                Ok((s.id, img))
            })
            .collect()
    }

    pub fn measurement_set(&self) -> Result<MeasurementSet> {
        let strip = |v: Vec<(u64, Sinogram)>| v.into_iter().map(|(_, s)| s).collect();
        Ok(MeasurementSet {
            train: strip(self.noisy(Split::Train)?),
            val: strip(self.noisy(Split::Val)?),
        })
    }

    /// Checks existence, digest and shape of every referenced file.
    pub fn verify(&self) -> Result<()> {
        for split in Split::ALL {
            self.noisy(split)?;
            self.clean(split)?;
            self.phantoms(split)?;
        }
        Ok(())
    }
}
