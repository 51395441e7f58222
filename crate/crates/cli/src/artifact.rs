//! Persisted model and threshold files.
//!
//! Numbers are written as shortest round-trip decimals, so loading a saved
//! file reproduces every value bit for bit.

use std::path::Path;

use brnn_core::data::{write_atomic, NormalizationStats};
use brnn_core::detection::DetectionConfig;
use brnn_core::monitor::{MonitorConfig, Thresholds};
use brnn_core::posterior::RnnModel;
use brnn_core::rnn::Activation;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub input_dim: usize,
    pub state_dim: usize,
    pub activation: Activation,
    pub variables: Vec<String>,
    pub model: RnnModel,
    pub normalization: NormalizationStats,
    pub ensemble_seed: u64,
}

impl ModelArtifact {
    pub fn new(
        model: RnnModel,
        variables: Vec<String>,
        normalization: NormalizationStats,
        ensemble_seed: u64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            input_dim: model.params.input_dim(),
            state_dim: model.params.state_dim(),
            activation: model.params.activation,
            variables,
            model,
            normalization,
            ensemble_seed,
        }
    }

    fn check(self, path: &Path) -> CliResult<Self> {
        let bad = |m: String| Err(CliError::format(path, m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!(
                "unsupported model format version {}",
                self.format_version
            ));
        }
        let p = &self.model.params;
        if p.input_dim() != self.input_dim
            || p.state_dim() != self.state_dim
            || p.activation != self.activation
        {
            return bad("header does not match the stored parameters".into());
        }
        if self.variables.len() != self.input_dim || self.normalization.width() != self.input_dim {
            return bad("variable list or normalization width does not match the model".into());
        }
        let m = &self.model;
        let rebuilt = RnnModel::new(
            p.clone(),
            m.p_d,
            m.lambda,
            m.length_scale,
            m.n_train,
            Some(m.tau),
        )
        .map_err(|e| CliError::format(path, e))?;
        Ok(Self {
            model: rebuilt,
            ..self
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json::<Self>(path)?.check(path)
    }
}

/// Calibrated thresholds together with the exact detection settings they
/// were drawn under; monitoring reuses these settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub format_version: u32,
    pub variables: Vec<String>,
    pub detection: DetectionConfig,
    pub ensemble_size: usize,
    pub thresholds: Thresholds,
}

impl ThresholdsFile {
    pub fn new(variables: Vec<String>, cfg: &MonitorConfig, thresholds: Thresholds) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            variables,
            detection: cfg.detection.clone(),
            ensemble_size: cfg.ensemble_size,
            thresholds,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let file: Self = read_json(path)?;
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::format(
                path,
                format!(
                    "unsupported thresholds format version {}",
                    file.format_version
                ),
            ));
        }
        if file.thresholds.variables.dim() != file.variables.len() {
            return Err(CliError::format(
                path,
                "threshold count does not match the variable list",
            ));
        }
        Ok(file)
    }

    /// Monitoring settings for a model whose ensemble seed is `seed`.
    pub fn monitor_config(&self, seed: u64) -> MonitorConfig {
        MonitorConfig {
            detection: self.detection.clone(),
            identification: self.thresholds.identification.clone(),
            ensemble_size: self.ensemble_size,
            ensemble_seed: seed,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}
