//! Versioned JSON checkpoints.
//!
//! Floats are written in their shortest round-trip form and read back
//! exactly, so loading and saving a checkpoint reproduces its bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DataSpec;
use crate::error::{Error, Result};
use crate::nets::{Activation, Architecture, ModelBundle};
use crate::training::{MetricsRecord, TrainConfig};

pub const FORMAT: &str = "lcw-ckpt/1";

/// How the seeded streams of a run were derived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSummary {
    pub algorithm: String,
    pub seed: u64,
}

impl RngSummary {
    pub fn new(seed: u64) -> Self {
        Self {
            algorithm: "chacha8, one stream per (seed, tag, counter)".into(),
            seed,
        }
    }
}

/// Training configuration and metrics of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: String,
    pub config: TrainConfig,
    pub rng: RngSummary,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub data: DataSpec,
    pub architecture: Architecture,
    pub output_activation: Activation,
    pub stages: Vec<StageRecord>,
    pub model: ModelBundle,
}

impl Checkpoint {
    pub fn new(data: DataSpec, architecture: Architecture, output_activation: Activation, model: ModelBundle) -> Self {
        Self {
            format: FORMAT.into(),
            data,
            architecture,
            output_activation,
            stages: Vec::new(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a checkpoint, rejecting other format versions before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT) => {}
            Some(other) => {
                return Err(Error::Incompatible(format!(
                    "checkpoint format `{other}` is not supported (expected `{FORMAT}`)"
                )))
            }
            None => return Err(Error::Format("not a checkpoint: no `format` field".into())),
        }
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.model.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
