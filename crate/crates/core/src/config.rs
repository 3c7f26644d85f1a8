//! Run configuration: one JSON document covering every module's settings.
//!
//! Missing fields take their defaults, unknown fields are rejected, and
//! validation errors name the offending field by its dotted path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::generator::{GenConfig, GenConfigError};
use crate::losses::ParamLossConfig;
use crate::optimize::FitConfig;
use crate::prototypes::DiscoveryConfig;
use crate::render::RenderConfig;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "SCENEFIT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
}

/// Optional default input locations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub render: RenderConfig,
    pub generator: GenConfig,
    pub fit: FitConfig,
    pub discovery: DiscoveryConfig,
    pub param_loss: ParamLossConfig,
    pub analysis: AnalysisConfig,
    pub paths: Paths,
    pub seed: u64,
}

fn invalid(field: &str, message: &str) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be positive and finite"))
    }
}

fn unit_open(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, "must lie in [0, 1)"))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(invalid(field, &format!("must be at least {min}")))
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.render;
        positive("render.sigma", r.sigma)?;
        positive("render.gamma", r.gamma)?;
        at_least("render.k_points", r.k_points, 3)?;
        if let Some(e) = r.background_logit {
            if !e.is_finite() {
                return Err(invalid("render.background_logit", "must be finite"));
            }
        }

        self.generator.validate().map_err(|e| match e {
            GenConfigError::Invalid { field, message } => ConfigError::Validation {
                field: format!("generator.{field}"),
                message,
            },
        })?;

        let f = &self.fit;
        positive("fit.adam.lr", f.adam.lr)?;
        unit_open("fit.adam.beta1", f.adam.beta1)?;
        unit_open("fit.adam.beta2", f.adam.beta2)?;
        positive("fit.adam.eps", f.adam.eps)?;
        if !(f.scheduler.factor > 0.0 && f.scheduler.factor < 1.0) {
            return Err(invalid("fit.scheduler.factor", "must lie in (0, 1)"));
        }
        if !(f.scheduler.threshold >= 0.0 && f.scheduler.threshold.is_finite()) {
            return Err(invalid("fit.scheduler.threshold", "must be non-negative and finite"));
        }
        at_least("fit.scheduler.patience", f.scheduler.patience, 1)?;
        at_least("fit.budget", f.budget, 1)?;
        at_least("fit.max_iterations", f.max_iterations, 1)?;
        positive("fit.convergence.min_lr", f.convergence.min_lr)?;
        if !(f.convergence.tolerance >= 0.0) {
            return Err(invalid("fit.convergence.tolerance", "must be non-negative"));
        }
        at_least("fit.convergence.window", f.convergence.window, 1)?;
        at_least("fit.opt_iter.blur_window", f.opt_iter.blur_window, 1)?;
        at_least("fit.opt_iter.color_window", f.opt_iter.color_window, 1)?;
        positive("fit.opt_iter.init_scale", f.opt_iter.init_scale)?;
        if !(f.opt_iter.residual_threshold >= 0.0) {
            return Err(invalid("fit.opt_iter.residual_threshold", "must be non-negative"));
        }
        at_least("fit.opt_iter.iterations_per_object", f.opt_iter.iterations_per_object, 1)?;
        at_least("fit.opt_iter.angle_starts", f.opt_iter.angle_starts, 1)?;

        let d = &self.discovery;
        at_least("discovery.rounds", d.rounds, 1)?;
        let [k0, k1] = d.k_range;
        if k0 < 2 || k0 > k1 {
            return Err(invalid("discovery.k_range", "must be a non-empty interval with lower bound at least 2"));
        }
        at_least("discovery.raster", d.raster as usize, 2)?;
        at_least("discovery.iterations", d.iterations, 1)?;
        at_least("discovery.n_harmonics", d.n_harmonics, 1)?;
        if !(0.0..=1.0).contains(&d.min_visible_fraction) {
            return Err(invalid("discovery.min_visible_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&d.min_cluster_fraction) {
            return Err(invalid("discovery.min_cluster_fraction", "must lie in [0, 0.5)"));
        }
        if 2 * d.n_harmonics >= r.k_points {
            return Err(invalid("discovery.n_harmonics", "must be below render.k_points / 2"));
        }

        if !(self.param_loss.symmetry_threshold > 0.0 && self.param_loss.symmetry_threshold < 1.0) {
            return Err(invalid("param_loss.symmetry_threshold", "must lie in (0, 1)"));
        }

        let a = &self.analysis;
        if a.alphas.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("analysis.alphas", "must lie in [0, 1]"));
        }
        if a.loss_kinds.is_empty() {
            return Err(invalid("analysis.loss_kinds", "at least one loss is required"));
        }
        at_least("analysis.recovery_budget", a.recovery_budget, 1)?;
        Ok(())
    }

    /// Parses and validates a configuration document.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// Reads, fills defaults into, and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Config::from_json(&text, path)
}

pub fn save_config(cfg: &Config, path: &Path) -> Result<(), ConfigError> {
    fs::write(path, cfg.to_json()).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
