//! Run configuration: one TOML document holding every hyperparameter, with
//! command-line flags layered on top.

use std::path::{Path, PathBuf};

use brnn_core::monitor::MonitorConfig;
use brnn_core::plant::{FaultKind, REFERENCE_PLANT_SEED};
use brnn_core::rnn::Activation;
use brnn_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the simulation, training and ensemble seeds.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub simulate: SimulateConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub monitor: MonitorConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            simulate: SimulateConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            monitor: MonitorConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// `"default"` for the reference plant, or a decimal plant seed.
    pub plant: String,
    pub fault: FaultKind,
    #[serde(rename = "T")]
    pub t: usize,
    pub onset: usize,
    /// Overrides the reference magnitude of the chosen fault kind.
    pub magnitude: Option<f64>,
    /// Overrides the reference target channel of the chosen fault kind.
    pub target_channel: Option<usize>,
    /// File stem of the written data (`<name>.csv`, `<name>.truth.csv`).
    pub name: String,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            plant: "default".into(),
            fault: FaultKind::None,
            t: 4000,
            onset: 1000,
            magnitude: None,
            target_channel: None,
            name: "data".into(),
            seed: 0,
        }
    }
}

impl SimulateConfig {
    pub fn plant_seed(&self) -> CliResult<u64> {
        if self.plant == "default" {
            return Ok(REFERENCE_PLANT_SEED);
        }
        self.plant.parse().map_err(|_| {
            CliError::Usage(format!(
                "plant must be 'default' or a non-negative integer seed, got '{}'",
                self.plant
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 32,
            activation: Activation::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Any of `r-pca`, `f-pca`, `r-dpca`, `f-dpca`.
    pub variants: Vec<String>,
    pub lag: usize,
    pub alpha: f64,
    pub pa_draws: usize,
    pub pa_quantile: f64,
    pub pa_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            variants: ["r-pca", "f-pca", "r-dpca", "f-dpca"]
                .map(String::from)
                .to_vec(),
            lag: 1,
            alpha: 0.05,
            pa_draws: 50,
            pa_quantile: 0.95,
            pa_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Applies the global seed, if any, to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.simulate.seed = s;
            self.train.seed = s;
            self.monitor.ensemble_seed = s;
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: brnn_core::Error| CliError::Usage(format!("invalid configuration: {e}"));
        self.train.validate().map_err(usage)?;
        self.monitor
            .detection
            .validate(self.monitor.ensemble_size)
            .map_err(usage)?;
        self.simulate.plant_seed()?;
        if self.model.state_dim == 0 {
            return Err(CliError::Usage("model.state_dim must be positive".into()));
        }
        if !(self.baseline.alpha > 0.0 && self.baseline.alpha < 1.0) {
            return Err(CliError::Usage(format!(
                "baseline.alpha {} outside (0, 1)",
                self.baseline.alpha
            )));
        }
        for v in &self.baseline.variants {
            BaselineVariant::parse(v)?;
        }
        Ok(())
    }
}

/// One of the four comparison models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineVariant {
    /// Reduced (`r-`, parallel-analysis component count, T² or Q alarms)
    /// versus full (`f-`, every component, T² alarms only).
    pub reduced: bool,
    pub dynamic: bool,
}

impl BaselineVariant {
    pub fn parse(s: &str) -> CliResult<Self> {
        let (reduced, dynamic) = match s {
            "r-pca" => (true, false),
            "f-pca" => (false, false),
            "r-dpca" => (true, true),
            "f-dpca" => (false, true),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown baseline variant '{other}' (expected r-pca, f-pca, r-dpca or f-dpca)"
                )))
            }
        };
        Ok(Self { reduced, dynamic })
    }

    pub fn name(&self) -> &'static str {
        match (self.reduced, self.dynamic) {
            (true, false) => "r-pca",
            (false, false) => "f-pca",
            (true, true) => "r-dpca",
            (false, true) => "f-dpca",
        }
    }
}
