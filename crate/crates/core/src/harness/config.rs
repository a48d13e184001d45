use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::agents::AgentConfig;
use crate::dt::DtConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::olla::{DEFAULT_STEP_UP, DEFAULT_TARGETS};

/// Offset between collection seeds and evaluation seeds.
pub const EVAL_SEED_OFFSET: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectPolicy {
    DpGreedy,
    Dqn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub gamma: f64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { gamma: 0.99, tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub policy: CollectPolicy,
    pub epsilons: Vec<f64>,
    pub n_seeds: u64,
    pub ttis: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { policy: CollectPolicy::DpGreedy, epsilons: vec![0.0, 0.25, 0.5], n_seeds: 20, ttis: 2_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_seeds: u64,
    pub horizon: u64,
    pub quantiles: Vec<f64>,
    pub olla_targets: Vec<f64>,
    pub olla_step_up: f64,
    /// Exploration level of the dataset agents are trained on.
    pub train_epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            horizon: 20_000,
            quantiles: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            olla_targets: DEFAULT_TARGETS.to_vec(),
            olla_step_up: DEFAULT_STEP_UP,
            train_epsilon: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed, added to every derived seed.
    pub seed: u64,
    pub env: EnvConfig,
    pub oracle: OracleConfig,
    pub collect: CollectConfig,
    pub agents: AgentConfig,
    pub dt: DtConfig,
    pub eval: EvalConfig,
    /// Output directory; not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            Error::Config(match line {
                Some(l) => format!("line {l}: {}", e.message()),
                None => e.message().to_string(),
            })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agents.validate()?;
        self.dt.validate()?;
        if !(self.oracle.gamma > 0.0 && self.oracle.gamma < 1.0 && self.oracle.tol > 0.0) {
            return Err(Error::Config("oracle.gamma must lie in (0, 1) and oracle.tol be positive".into()));
        }
        if self.collect.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config("collect.epsilons must lie in [0, 1]".into()));
        }
        if self.collect.n_seeds > EVAL_SEED_OFFSET || self.eval.n_seeds == 0 {
            return Err(Error::Config(format!("collect.n_seeds must be <= {EVAL_SEED_OFFSET}; eval.n_seeds >= 1")));
        }
        if self.eval.quantiles.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(Error::Config("eval.quantiles must lie in (0, 1]".into()));
        }
        if self.eval.olla_targets.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || self.eval.olla_step_up <= 0.0 {
            return Err(Error::Config("eval.olla_targets must lie in (0, 1) and eval.olla_step_up be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn collect_seeds(&self) -> Vec<u64> {
        (0..self.collect.n_seeds).map(|i| self.seed + i).collect()
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.n_seeds).map(|i| self.seed + EVAL_SEED_OFFSET + i).collect()
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { seed: self.agents.seed.wrapping_add(self.seed), ..self.agents.clone() }
    }

    pub fn dt_config(&self) -> DtConfig {
        DtConfig { seed: self.dt.seed.wrapping_add(self.seed), ..self.dt.clone() }
    }

    pub fn env_for_seed(&self, seed: u64) -> EnvConfig {
        EnvConfig { rng_seed: seed, ..self.env.clone() }
    }
}
