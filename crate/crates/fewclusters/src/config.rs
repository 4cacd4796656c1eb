//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "design": { "kind": "linear", "q1": 3, "q0": 3, "h": 10 },
//!   "sweep": { "param": "beta", "values": [0.0, 0.15, 0.3] },
//!   "methods": ["placebo", "im", "wild_bootstrap"],
//!   "replications": 2000,
//!   "alpha": 0.05,
//!   "seed": 1
//! }
//! ```
//!
//! Omitted design fields take the defaults of [`LinearDesign::new`] or
//! [`ProbitDesign::new`]. Unknown fields are rejected.

use std::path::Path;

use fewclusters_core::dgp::{LinearDesign, ProbitDesign};
use serde::{Deserialize, Serialize};

use crate::comparators::DEFAULT_BOOTSTRAP_REPS;
use crate::harness::{
    Design, ExperimentSpec, HarnessError, Method, PairingMode, Sweep, SweepParam,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Linear,
    Probit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKind,
    pub q1: usize,
    pub q0: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    /// Inclusive `[min, max]` cluster size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_range: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParamConfig {
    Beta,
    H,
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParamConfig,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingConfig {
    Random,
    BySize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub design: DesignConfig,
    pub sweep: SweepConfig,
    pub methods: Vec<String>,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
    #[serde(default = "default_pairing")]
    pub pairing: PairingConfig,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_bootstrap_reps() -> usize {
    DEFAULT_BOOTSTRAP_REPS
}

fn default_pairing() -> PairingConfig {
    PairingConfig::Random
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] HarnessError),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Converts to a validated [`ExperimentSpec`].
    pub fn to_spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let d = &self.design;
        let mut linear = match d.kind {
            DesignKind::Linear => LinearDesign::new(d.q1, d.q0),
            DesignKind::Probit => ProbitDesign::new(d.q1, d.q0).latent,
        };
        if let Some(h) = d.h {
            linear.h = h;
        }
        if let Some(beta) = d.beta {
            linear.beta = beta;
        }
        if let Some(theta0) = d.theta0 {
            linear.theta0 = theta0;
        }
        if let Some(eta) = &d.eta {
            linear.eta = eta.clone();
        }
        if let Some([lo, hi]) = d.size_range {
            linear.min_size = lo;
            linear.max_size = hi;
        }
        let design = match d.kind {
            DesignKind::Linear => Design::Linear(linear),
            DesignKind::Probit => Design::Probit(ProbitDesign { latent: linear }),
        };
        let methods = self
            .methods
            .iter()
            .enumerate()
            .map(|(i, name)| {
                Method::from_name(name).ok_or_else(|| HarnessError::Invalid {
                    field: format!("methods[{i}]"),
                    message: format!("unknown method {name:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let param = match self.sweep.param {
            SweepParamConfig::Beta => SweepParam::Beta,
            SweepParamConfig::H => SweepParam::H,
            SweepParamConfig::Q => SweepParam::Q,
        };
        let spec = ExperimentSpec {
            design,
            sweep: Sweep {
                param,
                values: self.sweep.values.clone(),
            },
            methods,
            replications: self.replications,
            alpha: self.alpha,
            master_seed: self.seed,
            bootstrap_reps: self.bootstrap_reps,
            pairing: match self.pairing {
                PairingConfig::Random => PairingMode::Random,
                PairingConfig::BySize => PairingMode::BySize,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}
