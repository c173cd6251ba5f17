//! The run configuration file and its hash.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stable_gvar::driver::RunConfig;
use stable_gvar::simulate::GridSpec;
use stable_gvar::{HyperParams, ModelSpec, MuMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub simulate: GridSpec,
    pub forecast: ForecastConfig,
    pub prior_check: PriorCheckConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            run: RunConfig::default(),
            simulate: GridSpec::default(),
            forecast: ForecastConfig::default(),
            prior_check: PriorCheckConfig::default(),
        }
    }
}

/// Hyperparameters; `big_d` defaults to the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub p: usize,
    /// Standardise every column before fitting.
    pub standardize: bool,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub e1: f64,
    pub e2: f64,
    pub d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_d: Option<Vec<Vec<f64>>>,
    pub mu: MuMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = HyperParams::default_for(1);
        Self {
            p: 1,
            standardize: true,
            a1: h.a1,
            a2: h.a2,
            b1: h.b1,
            b2: h.b2,
            c1: h.c1,
            c2: h.c2,
            e1: h.e1,
            e2: h.e2,
            d: h.d,
            big_d: None,
            mu: h.mu_mode,
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self, m: usize) -> CliResult<HyperParams> {
        let big_d = match &self.big_d {
            None => DMatrix::identity(m, m),
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(CliError::Config(format!(
                        "model.big_d must be {m} x {m} to match the data"
                    )));
                }
                DMatrix::from_fn(m, m, |i, j| rows[i][j])
            }
        };
        let h = HyperParams {
            a1: self.a1,
            a2: self.a2,
            b1: self.b1,
            b2: self.b2,
            c1: self.c1,
            c2: self.c2,
            e1: self.e1,
            e2: self.e2,
            d: self.d,
            big_d,
            mu_mode: self.mu,
        };
        h.validate(m).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(h)
    }

    pub fn spec(&self, m: usize) -> CliResult<ModelSpec> {
        ModelSpec::new(m, self.p, self.hyper(m)?).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizons: Vec<usize>,
    /// Trailing observations scored out of sample.
    pub holdout: usize,
    /// Variables scored one at a time; empty means all.
    pub variables: Vec<String>,
    /// Mixture draws per energy-score evaluation.
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 2, 4, 8],
            holdout: 40,
            variables: Vec::new(),
            n_mc: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorCheckConfig {
    pub m: usize,
    /// Significance level of the Kolmogorov-Smirnov tests.
    pub alpha: f64,
    /// Flag frequencies further than this many standard errors from the prior.
    pub z_limit: f64,
}

impl Default for PriorCheckConfig {
    fn default() -> Self {
        Self {
            m: 3,
            alpha: 0.01,
            z_limit: 3.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.run
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.model.p == 0 {
            return Err(CliError::Config("model.p must be at least 1".into()));
        }
        if self.forecast.horizons.is_empty() || self.forecast.horizons.contains(&0) {
            return Err(CliError::Config(
                "forecast.horizons must be positive integers".into(),
            ));
        }
        if self.forecast.n_mc < 2 {
            return Err(CliError::Config("forecast.n_mc must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }
}
