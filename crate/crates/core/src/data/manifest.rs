use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{idx, pgm, LabeledDataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Pgm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub probe: Vec<String>,
}

/// Dataset description. Paths are relative to the manifest's directory.
///
/// For `idx` each split lists `[images, labels]`; for `pgm` each split lists
/// directories whose leaf subdirectories are classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub format: DataFormat,
    pub splits: Splits,
    #[serde(default)]
    pub sha256: BTreeMap<String, String>,
    #[serde(skip)]
    base: PathBuf,
}

/// Outcome of [`Manifest::check`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestCheck {
    pub verified: Vec<String>,
    /// Split files that exist but carry no recorded digest.
    pub unverified: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, format!("invalid manifest: {e}")))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn with_base(mut self, base: impl Into<PathBuf>) -> Self {
        self.base = base.into();
        self
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    pub fn split_paths(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Probe => &self.splits.probe,
        }
    }

    /// Confirms every listed path exists and every recorded digest matches.
    pub fn check(&self) -> Result<ManifestCheck> {
        for rel in self.splits.train.iter().chain(&self.splits.probe) {
            let p = self.resolve(rel);
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                ));
            }
        }
        let mut verified = Vec::new();
        for (rel, expected) in &self.sha256 {
            let p = self.resolve(rel);
            let actual = sha256_file(&p)?;
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(Error::Checksum {
                    path: p,
                    expected: expected.clone(),
                    actual,
                });
            }
            verified.push(rel.clone());
        }
        let unverified = self
            .splits
            .train
            .iter()
            .chain(&self.splits.probe)
            .filter(|rel| self.resolve(rel).is_file() && !self.sha256.contains_key(*rel))
            .cloned()
            .collect();
        Ok(ManifestCheck { verified, unverified })
    }

    /// Loads one split; `target_hw` resizes PGM images.
    pub fn load_split(&self, split: Split, target_hw: Option<(usize, usize)>) -> Result<LabeledDataset> {
        let paths = self.split_paths(split);
        match self.format {
            DataFormat::Idx => {
                let [images, labels] = paths else {
                    return Err(Error::format(
                        self.base.join("manifest.json"),
                        format!("idx split must list [images, labels], got {} paths", paths.len()),
                    ));
                };
                idx::load_idx(&self.resolve(images), &self.resolve(labels), split)
            }
            DataFormat::Pgm => {
                if paths.is_empty() {
                    return Err(Error::contract(format!("{split:?} split lists no directories")));
                }
                let parts = paths
                    .iter()
                    .map(|rel| {
                        let dir = self.resolve(rel);
                        let ds = pgm::load_pgm_tree(&dir, target_hw, split)?;
                        let prefix = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                        Ok(ds.prefix_classes(&prefix))
                    })
                    .collect::<Result<Vec<_>>>()?;
                LabeledDataset::concat(parts, split)
            }
        }
    }
}
