//! Run configuration, read from TOML.
//!
//! ```toml
//! [game]
//! total_nodes = 10
//! attacker_rate = 1.0
//! defender_rate = 1.2
//! # observation_rate = 1.0, initial_attacker = 0, initial_defender = 0,
//! # max_epochs = 10000
//!
//! [policy]       # reserve_count = 0, availability = 1.0
//! [costs]        # unit_safety_cost = 0, burst_loss = 0, pricing = "per-node"
//! [grid]         # n_max = 10, rho_step = 0.05
//! [mc]           # trajectories = 100000, ci_level = 0.95, seed unset
//! [topology]     # optional; network simulation only
//! ```
//!
//! Unknown keys are rejected, and every error names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::economics::{CostParams, SearchGrid};
use crate::error::Error;
use crate::estimators::McConfig;
use crate::netsim::{TierWeights, Topology};
use crate::process::{GameParams, ReservePolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] Error),
}

fn default_trajectories() -> u64 {
    100_000
}

fn default_ci_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_trajectories")]
    pub trajectories: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            seed: None,
            ci_level: default_ci_level(),
        }
    }
}

impl McSection {
    pub fn with_seed(&self, seed: u64) -> McConfig {
        McConfig {
            num_trajectories: self.trajectories,
            seed,
            ci_level: self.ci_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub component_nodes: u32,
    pub service_nodes: u32,
    pub hq_nodes: u32,
    #[serde(default)]
    pub capture_weights: TierWeights,
}

impl TopologySection {
    pub fn topology(&self) -> Topology {
        Topology {
            component_nodes: self.component_nodes,
            service_nodes: self.service_nodes,
            hq_nodes: self.hq_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameParams,
    #[serde(default)]
    pub policy: ReservePolicy,
    #[serde(default)]
    pub costs: CostParams,
    #[serde(default)]
    pub grid: SearchGrid,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub topology: Option<TopologySection>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.game.validate()?;
        self.policy.validate()?;
        self.costs.validate()?;
        self.grid.validate()?;
        self.mc.with_seed(0).validate()?;
        if let Some(t) = &self.topology {
            t.topology().validate(self.game.total_nodes)?;
            t.capture_weights.validate()?;
        }
        Ok(())
    }

    /// The configured topology, or every node in the edge tier.
    pub fn topology_or_flat(&self) -> (Topology, TierWeights) {
        match &self.topology {
            Some(t) => (t.topology(), t.capture_weights),
            None => (
                Topology::flat(self.game.total_nodes),
                TierWeights::default(),
            ),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Schema {
        path: "<document>".to_string(),
        message: e.message().to_string(),
    })?;
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path,
            message: e.into_inner().message().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[game]\ntotal_nodes = 4\nattacker_rate = 1.0\ndefender_rate = 1.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.game.observation_rate, 1.0);
        assert_eq!(c.game.max_epochs, 10_000);
        assert_eq!(c.grid.rho_step, 0.05);
        assert_eq!(c.mc.ci_level, 0.95);
        assert_eq!(c.mc.seed, None);
        assert!(c.topology.is_none());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = parse_config(&format!(
            "{MINIMAL}[policy]\nreserve_count = 2\n[costs]\nburst_loss = 5.0\n"
        ))
        .unwrap();
        assert_eq!(c.policy, ReservePolicy::new(2, 1.0));
        assert_eq!(c.costs.unit_safety_cost, 0.0);
        assert_eq!(c.costs.burst_loss, 5.0);
    }

    #[test]
    fn out_of_range_availability_names_the_field() {
        let text = format!("{MINIMAL}[policy]\nreserve_count = 2\navailability = 1.5\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("policy.availability"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}lambda_x = 3.0\n");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambda_x") && msg.starts_with("game"), "{msg}");
    }

    #[test]
    fn wrong_types_name_the_field() {
        let text = "[game]\ntotal_nodes = \"four\"\nattacker_rate = 1.0\ndefender_rate = 1.0\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().starts_with("game.total_nodes"), "{err}");
    }

    #[test]
    fn topology_must_match_node_count() {
        let text =
            format!("{MINIMAL}[topology]\ncomponent_nodes = 2\nservice_nodes = 1\nhq_nodes = 0\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Invalid(Error::TopologyMismatch { .. }))
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_config("/definitely/not/here.toml"),
            Err(ConfigError::Io { .. })
        ));
    }
}
