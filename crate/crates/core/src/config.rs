//! End-to-end experiment configuration read by the CLI and the acceptance
//! suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ehr::{split_dataset, Dataset, IngestConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Configuration of the bundled synthetic corpus experiment.
pub const SHIPPED_CONFIG: &str = include_str!("../data/synthetic_corpus.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn apply(&self, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        split_dataset(ds, (self.train, self.val, self.test), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.25, 0.75],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub synth_seed: u64,
    /// How `train`/`evaluate`/`serve` read a CSV corpus.
    pub ingest: IngestConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub robustness: RobustnessConfig,
}

impl ExperimentConfig {
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_CONFIG).expect("bundled config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.ingest.levels != self.synth.levels {
            return Err(Error::InvalidConfig(format!(
                "ingest.levels {} differs from synth.levels {}",
                self.ingest.levels, self.synth.levels
            )));
        }
        self.train.validate()?;
        if let Some(&f) = self.robustness.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::BadFraction(f));
        }
        Ok(())
    }
}
