//! Run configuration, read from and written back to TOML.
//!
//! Every section is optional; missing fields take their defaults. The
//! top-level `seed` and the `[hyper]` table are authoritative: [`RunConfig::resolve`]
//! copies them into the model, training, metrics and scenario sections so the
//! resolved file written next to each run's outputs never disagrees with itself.

use std::fs;
use std::path::{Path, PathBuf};

use dipa::metrics::MetricsConfig;
use dipa::synth::{ImportConfig, ScenarioSpec};
use dipa::training::{TrainConfig, TrainVariant};
use dipa::{Hyperparameters, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_eval: usize,
    /// Share of imported windows held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_eval: 1000,
            eval_fraction: 0.2,
        }
    }
}

/// Paths recorded for reproducibility; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: TrainVariant,
    pub hyper: Hyperparameters,
    pub data: DataConfig,
    pub paths: Paths,
    pub scenario: ScenarioSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub import: ImportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: TrainVariant::DipaDefault,
            hyper: Hyperparameters::default(),
            data: DataConfig::default(),
            paths: Paths::default(),
            scenario: ScenarioSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            import: ImportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Reads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Propagates the shared settings into every section and validates.
    pub fn resolve(mut self) -> CliResult<Self> {
        let h = self.hyper;
        h.validate()?;
        self.model.modes = h.modes;
        self.model.obs_steps = h.obs_steps;
        self.model.future_steps = h.future_steps;
        self.model.seed = self.seed;
        self.train.k_r = h.k_r;
        self.train.seed = self.seed;
        self.metrics.dt = h.dt;
        self.metrics.sigma_min = h.sigma_min;
        self.metrics.miss_threshold = h.miss_threshold;
        self.scenario.obs_steps = h.obs_steps;
        self.scenario.future_steps = h.future_steps;
        self.scenario.dt = h.dt;
        self.scenario.seed = self.seed;
        self.import.obs_steps = h.obs_steps;
        self.import.future_steps = h.future_steps;
        self.import.dt = h.dt;
        self.model.validate()?;
        self.train.validate()?;
        self.scenario.validate()?;
        if !(0.0..1.0).contains(&self.data.eval_fraction) {
            return Err(CliError::Config(format!(
                "eval_fraction = {} outside [0, 1)",
                self.data.eval_fraction
            )));
        }
        Ok(self)
    }
}
