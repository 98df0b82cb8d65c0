//! One configuration for the whole chain. Defaults are the published
//! constants; a JSON file overrides any subset, and command-line flags
//! override both.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corner::CornerConfig;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, FuseConfig};
use crate::graphnet::{NetConfig, TrainConfig};
use crate::preprocess::PreprocessConfig;
use crate::sim::dataset::DatasetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Samples rendered per class and split group.
    pub per_class: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { per_class: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub corner: CornerConfig,
    pub filter: FilterConfig,
    pub fuse: FuseConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub plot: PlotConfig,
    /// Keep simulated echoes on disk; otherwise they are regenerated from
    /// their seeds when needed.
    pub keep_echo: bool,
    /// Single-threaded everywhere.
    pub deterministic: bool,
}

impl PipelineConfig {
    /// Defaults overlaid with the fields present in `text`.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn parallel(&self) -> bool {
        !self.deterministic
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.corner.smoothing.validate()?;
        self.filter.embedding.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.net.num_points != 2 * self.filter.cor0 {
            return Err(Error::Config(format!(
                "network expects {} points but fusion yields {}",
                self.net.num_points,
                2 * self.filter.cor0
            )));
        }
        if self.net.num_classes() != crate::sim::ActivityClass::ALL.len() {
            return Err(Error::Config("the classifier must have one output per activity class".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.dataset.radar, crate::sim::RadarParams::default());
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.lr, 0.00147);
        assert_eq!(c.filter.cor0, 30);
        assert_eq!(c.net.num_points, 60);
    }

    #[test]
    fn partial_json_overrides_only_named_fields() {
        let c = PipelineConfig::from_json(r#"{"train": {"epochs": 3}, "dataset": {"per_class": 7}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.dataset.per_class, 7);
        assert_eq!(c.filter, FilterConfig::default());
        assert!(PipelineConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
