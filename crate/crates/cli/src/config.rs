//! Optional TOML run configuration. Command-line flags override file values.

use std::path::Path;

use anyhow::Context;
use flowplan_core::geodata::{AdjacencyPolicy, GeoError, SplitRatios};
use flowplan_core::model::ModelConfig;
use flowplan_core::scenario::ScenarioOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset label printed in report tables.
    pub label: String,
    /// Seed of the train/val/test assignment; defaults to the training seed.
    pub split_seed: Option<u64>,
    pub ratios: SplitRatios,
    pub adjacency: AdjacencyPolicy,
    pub model: ModelConfig,
    pub scenario: ScenarioOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "city".into(),
            split_seed: None,
            ratios: SplitRatios::default(),
            adjacency: AdjacencyPolicy::default(),
            model: ModelConfig::default(),
            scenario: ScenarioOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                anyhow::Error::new(GeoError::MissingInput(path.display().to_string()))
            } else {
                anyhow::Error::new(e).context(format!("reading {}", path.display()))
            }
        })?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))
            .with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex sha256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
