use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::sim::{RadarParams, SceneConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub class: String,
    pub split: String,
    pub height_m: f64,
    pub seed: u64,
    /// Artifact name (e.g. `echo`, `cloud`) to path relative to the manifest.
    #[serde(default)]
    pub paths: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub radar: RadarParams,
    pub scene: SceneConfig,
    pub classes: Vec<String>,
    /// train : validation : test-per-height
    pub split_ratio: [u32; 3],
    pub creation_seed: u64,
    pub samples: Vec<SampleRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Schema("class list is empty".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate sample id '{}'", s.id)));
            }
            if !self.classes.contains(&s.class) {
                return Err(Error::Schema(format!(
                    "sample '{}' has unknown class '{}'",
                    s.id, s.class
                )));
            }
        }
        Ok(())
    }

    pub fn samples_in<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn splits(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.split) {
                out.push(s.split.clone());
            }
        }
        out
    }
}

pub fn manifest_to_string(m: &DatasetManifest) -> Result<String> {
    let mut s = serde_json::to_string_pretty(m)?;
    s.push('\n');
    Ok(s)
}

pub fn save_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<()> {
    m.validate()?;
    atomic_write(path.as_ref(), manifest_to_string(m)?.as_bytes())
}

/// Parses and validates a manifest. Every referenced artifact must exist
/// relative to the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for s in &m.samples {
        for rel in s.paths.values() {
            let p: PathBuf = root.join(rel);
            if !p.exists() {
                return Err(Error::Schema(format!(
                    "sample '{}' references missing file {}",
                    s.id,
                    p.display()
                )));
            }
        }
    }
    Ok(m)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    m.validate()?;
    Ok(m)
}
