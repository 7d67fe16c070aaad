//! Dataset manifests (TOML) and in-memory datasets.
//!
//! ```toml
//! modalities = ["t1w", "t2w"]
//! target = "t2w"
//! hr_size = 96
//! bit_depth = 16
//!
//! [[records]]
//! id = "slice0000"
//! split = "train"
//! paths = { t1w = "slice0000_t1w.pgm", t2w = "slice0000_t2w.pgm" }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::read_pgm;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub split: Split,
    /// Modality name → image path.
    pub paths: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modalities: Vec<String>,
    pub target: String,
    pub hr_size: usize,
    pub bit_depth: u8,
    #[serde(default)]
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.message().to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text)?;
        let root = path.parent().unwrap_or(Path::new("."));
        for r in &m.records {
            for p in r.paths.values() {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!("record `{}`: missing file {}", r.id, full.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Manifest("no modalities listed".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.modalities {
            if !seen.insert(m) {
                return Err(Error::Manifest(format!("duplicate modality `{m}`")));
            }
        }
        self.target_index()?;
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(Error::Manifest(format!("bit_depth must be 8 or 16, got {}", self.bit_depth)));
        }
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.records {
            if !ids.insert(&r.id) {
                return Err(Error::Manifest(format!("duplicate record id `{}`", r.id)));
            }
            for m in &self.modalities {
                if !r.paths.contains_key(m) {
                    return Err(Error::Manifest(format!("record `{}` lacks modality `{m}`", r.id)));
                }
            }
            if let Some(extra) = r.paths.keys().find(|k| !self.modalities.contains(k)) {
                return Err(Error::Manifest(format!("record `{}` has unknown modality `{extra}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn target_index(&self) -> Result<usize> {
        self.modality_index(&self.target)
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::Manifest(format!("modality `{name}` not listed")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// One record's HR images, in manifest modality order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Real = f32> {
    pub id: String,
    pub split: Split,
    pub images: Vec<Tensor<T>>,
}

/// A manifest with every image decoded to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real = f32> {
    pub modalities: Vec<String>,
    pub target: usize,
    pub samples: Vec<Sample<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&m, root)
    }

    pub fn from_manifest(m: &DatasetManifest, root: &Path) -> Result<Self> {
        m.validate()?;
        let mut samples = Vec::with_capacity(m.records.len());
        for r in &m.records {
            let mut images = Vec::with_capacity(m.modalities.len());
            for name in &m.modalities {
                let path: PathBuf = root.join(&r.paths[name]);
                let img = read_pgm(&path)?;
                if img.width != m.hr_size || img.height != m.hr_size {
                    return Err(Error::Image {
                        path: path.display().to_string(),
                        reason: format!(
                            "expected {0}x{0}, found {1}x{2}",
                            m.hr_size, img.width, img.height
                        ),
                    });
                }
                images.push(img.to_tensor());
            }
            samples.push(Sample {
                id: r.id.clone(),
                split: r.split,
                images,
            });
        }
        Ok(Dataset {
            modalities: m.modalities.clone(),
            target: m.target_index()?,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample<T>> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Dataset modality indices fed to an `n`-input model: the target alone
    /// for `n = 1`, every modality for `n = len`, otherwise the target
    /// followed by the remaining modalities in manifest order.
    pub fn default_inputs(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 || n > self.modalities.len() {
            return Err(Error::Config(format!(
                "model needs {n} modalities, dataset has {}",
                self.modalities.len()
            )));
        }
        if n == self.modalities.len() {
            return Ok((0..n).collect());
        }
        let mut v = vec![self.target];
        v.extend((0..self.modalities.len()).filter(|&i| i != self.target).take(n - 1));
        Ok(v)
    }

    /// Resolve modality names to indices.
    pub fn inputs_by_name(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.modalities
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::Config(format!("unknown modality `{n}`")))
            })
            .collect()
    }
}
