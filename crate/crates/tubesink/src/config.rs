//! The run configuration document: everything a reproducible run needs,
//! with documented defaults, strict unknown-key rejection, and validation
//! of every module invariant at load time. TOML and JSON are accepted.

use crate::error::{Error, Result};
use crate::eval::probe::ProbeConfig;
use crate::eval::segmentation::SegmentationConfig;
use crate::synthetic::GeneratorConfig;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub generator: GeneratorConfig,
    /// Clips to generate for `gen`.
    pub clips: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { generator: GeneratorConfig::default(), clips: 48 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub segmentation: SegmentationConfig,
    /// Every n-th clip forms the probe test split.
    pub test_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            segmentation: SegmentationConfig::default(),
            test_every: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Prototype counts for the `prototypes` axis.
    pub prototype_grid: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { prototype_grid: vec![16, 32, 64, 128] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.generator.validate()?;
        if self.data.clips == 0 {
            return Err(Error::Config("data.clips must be at least 1".into()));
        }
        self.train.validate()?;
        self.train.geometry.validate_for(
            self.data.generator.frames,
            self.data.generator.height,
            self.data.generator.width,
        )?;
        if self.train.channels != self.data.generator.channels {
            return Err(Error::Config(format!(
                "train.channels {} does not match generator channels {}",
                self.train.channels, self.data.generator.channels
            )));
        }
        self.eval.probe.validate()?;
        if self.eval.test_every < 2 {
            return Err(Error::Config("eval.test_every must be at least 2".into()));
        }
        if self.sweep.prototype_grid.is_empty() {
            return Err(Error::Config("sweep.prototype_grid must be non-empty".into()));
        }
        Ok(())
    }

    /// Parse from TOML or JSON depending on the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("bad JSON config {path:?}: {e}")))?
        } else {
            toml::from_str(&text)
                .map_err(|e| Error::Parse(format!("bad TOML config {path:?}: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("config serialization failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{Objective, Projection};

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let mut config = RunConfig::default();
        config.train.objective = Objective::FeatureL2;
        config.train.seed = 9;
        config.sweep.prototype_grid = vec![8, 16];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config.to_toml().unwrap()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let mut config = RunConfig::default();
        config.train.projection = Projection::External { path: "feats".into() };
        config.train.objective = Objective::Sigma;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nobjective = \"sigma\"\nbogus_knob = 3\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nseed = 3\n[data]\nclips = 16\n").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.train.seed, 3);
        assert_eq!(config.data.clips, 16);
        assert_eq!(config.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn cross_module_invariants_are_checked() {
        let mut config = RunConfig::default();
        config.data.generator.height = 40; // not divisible by tube size 8? 40 is; use 36
        config.data.generator.height = 36;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config.to_toml().unwrap()).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
