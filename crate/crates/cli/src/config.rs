//! Experiment configuration files.
//!
//! A config is a TOML document with top-level run settings and one table per
//! block. Every key is optional and falls back to the library default;
//! unknown keys are rejected.
//!
//! ```toml
//! rounds = 30
//! seeds = [1, 2, 3, 4, 5]
//!
//! [data]
//! noise_std = 1.0
//!
//! [trust]
//! mode = "fedmmx"
//!
//! [attack]
//! kind = "label_flip"
//! ```

use std::fmt::Display;
use std::path::{Path, PathBuf};

use fedmmx_core::adversary::AttackSpec;
use fedmmx_core::data::SyntheticSpec;
use fedmmx_core::fed::{SimulationConfig, TrustConfig};
use fedmmx_core::metrics::EvalConfig;
use fedmmx_core::nam::Hyperparams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config [{block}]: {reason}")]
    Invalid { block: &'static str, reason: String },
}

fn invalid(block: &'static str) -> impl Fn(&dyn Display) -> ConfigError {
    move |e| ConfigError::Invalid { block, reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub participation: f64,
    pub validation_fraction: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data: SyntheticSpec,
    pub hyper: Hyperparams,
    pub trust: TrustConfig,
    pub attack: Option<AttackSpec>,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        ExperimentConfig {
            rounds: sim.rounds,
            participation: sim.participation,
            validation_fraction: sim.validation_fraction,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            data: sim.data,
            hyper: sim.hyper,
            trust: sim.trust,
            attack: None,
            eval: sim.eval,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.data.validate().map_err(|e| invalid("data")(&e))?;
        self.hyper.validate().map_err(|e| invalid("hyper")(&e))?;
        self.trust.validate().map_err(|e| invalid("trust")(&e))?;
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| invalid("attack")(&e))?;
        }
        if self.seeds.is_empty() {
            return Err(invalid("top-level")(&"`seeds` must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("top-level")(&"`seeds` must not repeat a seed"));
        }
        self.simulation(self.seeds[0]).validate().map_err(|e| invalid("top-level")(&e))
    }

    /// Single-seed simulation. The seed drives both data generation and
    /// training.
    pub fn simulation(&self, seed: u64) -> SimulationConfig {
        let mut data = self.data.clone();
        data.seed = seed;
        SimulationConfig {
            data,
            hyper: self.hyper.clone(),
            trust: self.trust.clone(),
            attack: self.attack,
            eval: self.eval,
            rounds: self.rounds,
            participation: self.participation,
            validation_fraction: self.validation_fraction,
            seed,
            parallel: false,
        }
    }

    /// The same experiment without adversaries.
    pub fn clean(&self) -> Self {
        ExperimentConfig { attack: None, ..self.clone() }
    }
}
