//! Value-based and imitation agents over the toy environment.
//!
//! All agents share one network shape: a ReLU trunk over the
//! [`ObservationEncoder`] features followed by a Q head, a behaviour
//! (action-probability) head, or both.

mod bc;
mod bcq;
mod cql;
mod dqn;
mod fit;
mod net;
mod replay;

pub use bc::bc_train;
pub use bcq::{bcq_action_filter, bcq_train};
pub use cql::{cql_loss, cql_train};
pub use dqn::{dqn_train, td_target};
pub use net::{AgentNet, TabularPolicy, ValueAgent};
pub use replay::ReplayBuffer;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::{Activation, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Bc,
    Bcq,
    Cql,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Dqn, AgentKind::Bc, AgentKind::Bcq, AgentKind::Cql];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Bc => "bc",
            AgentKind::Bcq => "bcq",
            AgentKind::Cql => "cql",
        }
    }

    pub fn has_q_head(self) -> bool {
        !matches!(self, AgentKind::Bc)
    }

    pub fn has_behavior_head(self) -> bool {
        matches!(self, AgentKind::Bc | AgentKind::Bcq)
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown agent {s:?}")))
    }
}

/// How TD targets treat the end of a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    /// A packet is an episode; the last attempt's target is its reward.
    Episodic,
    /// Bootstrap into the next packet's first attempt.
    Continuing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden_width: usize,
    /// Number of linear layers, heads included.
    pub layers: usize,
    pub activation: Activation,
    pub steps: usize,
    /// Defaults per algorithm when unset.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub target_update: Option<usize>,
    pub gamma: f64,
    pub bootstrap: Bootstrap,
    pub cql_alpha: f64,
    pub bcq_tau: f64,
    pub bcq_beta: f64,
    pub dqn_epsilon_start: f64,
    pub dqn_epsilon_end: f64,
    pub dqn_epsilon_decay_steps: usize,
    pub dqn_buffer_capacity: usize,
    pub dqn_learning_starts: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            layers: 3,
            activation: Activation::Relu,
            steps: 20_000,
            lr: None,
            batch_size: 64,
            target_update: None,
            gamma: 0.99,
            bootstrap: Bootstrap::Episodic,
            cql_alpha: 0.2,
            bcq_tau: 0.5,
            bcq_beta: 0.3,
            dqn_epsilon_start: 1.0,
            dqn_epsilon_end: 0.05,
            dqn_epsilon_decay_steps: 10_000,
            dqn_buffer_capacity: 50_000,
            dqn_learning_starts: 1_000,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn lr_for(&self, kind: AgentKind) -> f64 {
        self.lr.unwrap_or(match kind {
            AgentKind::Bcq => 1e-4,
            AgentKind::Cql | AgentKind::Dqn | AgentKind::Bc => 5e-4,
        })
    }

    pub fn target_update_for(&self, kind: AgentKind) -> usize {
        self.target_update.unwrap_or(match kind {
            AgentKind::Bcq => 1024,
            AgentKind::Cql => 2000,
            AgentKind::Dqn | AgentKind::Bc => 1000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.layers < 2 || self.batch_size == 0 {
            return Err(Error::Config("agent network needs hidden_width >= 1, layers >= 2, batch_size >= 1".into()));
        }
        if self.target_update == Some(0) {
            return Err(Error::Config("target_update must be positive".into()));
        }
        if self.cql_alpha < 0.0 {
            return Err(Error::Config("cql_alpha must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.bcq_tau) {
            return Err(Error::Config("bcq_tau must lie in [0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("agent gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One-hot retransmission index, normalised context, one-hot CQI bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationEncoder {
    pub n_states: usize,
    pub context_max: u32,
    pub n_cqi: usize,
}

impl ObservationEncoder {
    pub fn new(config: &EnvConfig) -> Self {
        Self { n_states: config.n_states, context_max: config.context_max, n_cqi: config.n_cqi }
    }

    pub fn width(&self) -> usize {
        self.n_states + 1 + self.n_cqi
    }

    pub fn encode_into(&self, obs: &Observation, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[obs.k.min(self.n_states - 1)] = 1.0;
        out[self.n_states] = obs.x as f64 / self.context_max as f64;
        out[self.n_states + 1 + obs.cqi.min(self.n_cqi - 1)] = 1.0;
    }

    pub fn encode(&self, obs: &Observation) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        self.encode_into(obs, &mut v);
        v
    }

    pub fn batch<'a>(&self, obs: impl ExactSizeIterator<Item = &'a Observation>) -> Tensor {
        let w = self.width();
        let mut t = Tensor::zeros(obs.len(), w);
        for (r, o) in obs.enumerate() {
            self.encode_into(o, &mut t.data[r * w..(r + 1) * w]);
        }
        t
    }
}
