use std::path::Path;

use serde::{Deserialize, Serialize};
use smart_pce::estimands::DEFAULT_CLASSES;
use smart_pce::{Direction, OutcomeTransform, Result, SamplerConfig};

/// Everything a command can be configured with, one section per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub sampler: SamplerConfig,
    pub estimate: EstimateConfig,
    pub replicate: ReplicateConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Analyse `log(y + log_shift)` instead of `y`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_shift: Option<f64>,
}

impl DataConfig {
    pub fn transform(&self) -> OutcomeTransform {
        self.log_shift.map_or(OutcomeTransform::Identity, OutcomeTransform::LogShift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub rho: f64,
    pub noise_sd: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n: 250, rho: 0.2, noise_sd: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub alpha: f64,
    pub level: f64,
    pub classes: String,
    pub direction: Direction,
    pub grid_steps: usize,
    pub itt_resamples: usize,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            alpha: 0.05,
            level: 0.95,
            classes: DEFAULT_CLASSES.to_string(),
            direction: Direction::Maximize,
            grid_steps: 21,
            itt_resamples: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateConfig {
    pub replicates: usize,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig { replicates: 20 }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            None => Ok(Config::default()),
            Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p)?)?),
        }
    }
}
