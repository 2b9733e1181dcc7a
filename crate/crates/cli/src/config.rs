//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voltube_core::model::{bounded_skew_heston, make_heston, EnvelopeConfig};
use voltube_core::simulate::Scheme;
use voltube_core::ModelSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyConfig {
    Heston {
        kappa: f64,
        theta: f64,
        xi: f64,
        rho: f64,
        v0: f64,
        horizon: f64,
    },
    BoundedSkewHeston {
        kappa: f64,
        theta: f64,
        xi: f64,
        rho: f64,
        v0: f64,
        horizon: f64,
        eta0: f64,
        epsilon: f64,
    },
}

/// Overrides for constants the model class leaves unpinned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBounds {
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "C2")]
    pub c2: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub custom_bounds: Option<CustomBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Targets {
    pub y_list: Vec<f64>,
    pub j_list: Vec<u32>,
    pub strikes: Vec<f64>,
    pub p_list: Vec<f64>,
    pub dt_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A parsed config with the hash of the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.run.n_paths == 0 || self.run.n_steps == 0 {
            return Err(CliError::Config("run.n_paths and run.n_steps must be positive".into()));
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(CliError::Config(format!("unknown output format {f:?}")));
            }
        }
        Ok(())
    }

    /// Builds the model, applying `custom_bounds`.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let spec = match self.model.family {
            FamilyConfig::Heston {
                kappa,
                theta,
                xi,
                rho,
                v0,
                horizon,
            } => make_heston(kappa, theta, xi, rho, v0, horizon),
            FamilyConfig::BoundedSkewHeston {
                kappa,
                theta,
                xi,
                rho,
                v0,
                horizon,
                eta0,
                epsilon,
            } => bounded_skew_heston(kappa, theta, xi, rho, v0, horizon, eta0, epsilon),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let Some(cb) = self.model.custom_bounds else {
            return Ok(spec);
        };
        let mut bounds = spec.bounds;
        if let Some(k) = cb.k {
            bounds.k = k;
        }
        let envelope = EnvelopeConfig {
            c2: cb.c2.unwrap_or(spec.envelope.c2),
            l_override: cb.l.or(spec.envelope.l_override),
        };
        spec.with_bounds(bounds)
            .and_then(|s| s.with_envelope(envelope))
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
    let config = ExperimentConfig::parse(text)?;
    let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(LoadedConfig { config, sha256 })
}
