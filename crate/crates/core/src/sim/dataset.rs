//! Labelled echo datasets on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{
    add_wall_and_noise, build_trajectory, synthesize_echo, ActivityClass, EchoMatrix,
    RadarParams, SceneConfig, REFERENCE_HEIGHT_M,
};
use crate::error::{Error, Result};
use crate::store::{save_manifest, save_tensor, DatasetManifest, SampleRecord, Tensor, SCHEMA_VERSION};

/// Train : validation : test-per-height.
pub const SPLIT_RATIO: [u32; 3] = [8, 2, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<ActivityClass>,
    /// Train plus validation samples per class; each test set adds
    /// `max(1, round(per_class / 10))` more.
    pub per_class: usize,
    /// One test set per height. Train and validation always use the
    /// reference height.
    pub heights_m: Vec<f64>,
    pub seed: u64,
    pub radar: RadarParams,
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: ActivityClass::ALL.to_vec(),
            per_class: 10,
            heights_m: vec![REFERENCE_HEIGHT_M],
            seed: 0,
            radar: RadarParams::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("class list is empty".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per-class count must be at least 1".into()));
        }
        for &h in &self.heights_m {
            self.scene.clone().with_height(h).validate()?;
        }
        self.radar.validate()
    }

    /// (train, val, test-per-height) counts for one class.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.per_class;
        let train = ((n as f64) * 0.8).round() as usize;
        let train = train.min(n);
        let test = ((n as f64) / 10.0).round().max(1.0) as usize;
        (train, n - train, test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedSample {
    pub id: String,
    pub class: ActivityClass,
    pub split: Split,
    pub height_m: f64,
    pub seed: u64,
}

impl PlannedSample {
    /// Simulates the echo, wall and noise for this sample.
    pub fn simulate(&self, radar: &RadarParams, scene: &SceneConfig) -> Result<EchoMatrix> {
        let scene = scene.clone().with_height(self.height_m);
        let traj = build_trajectory(self.class, &scene, radar, self.seed);
        let clean = synthesize_echo(&traj, radar)?;
        let (noisy, _) = add_wall_and_noise(&clean, &scene, mix(self.seed, 0x6e6f697365))?;
        Ok(noisy)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b))
}

/// Seed of one sample; independent of generation order.
pub fn sample_seed(master: u64, class: ActivityClass, split: Split, height_idx: usize, index: usize) -> u64 {
    [class.index() as u64, split.code(), height_idx as u64, index as u64]
        .into_iter()
        .fold(splitmix(master), mix)
}

/// Lists every sample of the dataset without simulating anything.
pub fn plan_dataset(cfg: &DatasetConfig) -> Result<Vec<PlannedSample>> {
    cfg.validate()?;
    let (train, val, test) = cfg.split_counts();
    let mut out = Vec::new();
    for &class in &cfg.classes {
        let mut push = |split: Split, height_idx: usize, height_m: f64, index: usize| {
            let id = match split {
                Split::Test => format!("{}-test-h{}-{index:03}", class.name(), height_idx),
                _ => format!("{}-{}-{index:03}", class.name(), split),
            };
            out.push(PlannedSample {
                id,
                class,
                split,
                height_m,
                seed: sample_seed(cfg.seed, class, split, height_idx, index),
            });
        };
        for i in 0..train {
            push(Split::Train, 0, REFERENCE_HEIGHT_M, i);
        }
        for i in 0..val {
            push(Split::Val, 0, REFERENCE_HEIGHT_M, i);
        }
        for (hi, &h) in cfg.heights_m.iter().enumerate() {
            for i in 0..test {
                push(Split::Test, hi, h, i);
            }
        }
    }
    Ok(out)
}

/// Simulates every planned sample and writes `manifest.json` plus one echo
/// tensor per sample under `out_dir/samples/`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path, parallel: bool) -> Result<DatasetManifest> {
    let plan = plan_dataset(cfg)?;
    std::fs::create_dir_all(out_dir.join("samples")).map_err(|e| Error::io(out_dir, e))?;
    let write_one = |s: &PlannedSample| -> Result<SampleRecord> {
        let echo = s.simulate(&cfg.radar, &cfg.scene)?;
        let rel = format!("samples/{}.echo.mdt", s.id);
        save_tensor(out_dir.join(&rel), &Tensor::from_c64(&echo.data))?;
        let mut paths = BTreeMap::new();
        paths.insert("echo".to_string(), rel);
        Ok(SampleRecord {
            id: s.id.clone(),
            class: s.class.name().to_string(),
            split: s.split.as_str().to_string(),
            height_m: s.height_m,
            seed: s.seed,
            paths,
            extra: Map::new(),
        })
    };
    let samples: Vec<SampleRecord> = if parallel {
        plan.par_iter().map(write_one).collect::<Result<_>>()?
    } else {
        plan.iter().map(write_one).collect::<Result<_>>()?
    };
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        radar: cfg.radar.clone(),
        scene: cfg.scene.clone(),
        classes: cfg.classes.iter().map(|c| c.name().to_string()).collect(),
        split_ratio: SPLIT_RATIO,
        creation_seed: cfg.seed,
        samples,
        extra: Map::new(),
    };
    save_manifest(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
