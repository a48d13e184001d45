//! Rule-based inner/outer-loop link adaptation.
//!
//! The inner loop picks the most aggressive MCS whose predicted success
//! probability at the effective context meets the BLER target. The outer
//! loop nudges the effective context by HARQ feedback: every NACK backs off
//! by `step_up`, every ACK advances by `step_up · target / (1 − target)`, so
//! the offset is stationary exactly when the realised BLER equals the target.

use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::env::{Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::policy::Policy;

pub const DEFAULT_STEP_UP: f64 = 5.0;
pub const DEFAULT_TARGETS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OllaState {
    /// Correction added to the observed context.
    pub offset: f64,
    pub target_bler: f64,
    pub step_up: f64,
    /// Offset magnitude bound.
    pub limit: f64,
}

impl OllaState {
    pub fn new(target_bler: f64, step_up: f64, context_max: u32) -> Result<Self> {
        if !(target_bler > 0.0 && target_bler < 1.0) {
            return Err(Error::domain("target BLER", target_bler));
        }
        if !(step_up > 0.0 && step_up.is_finite()) {
            return Err(Error::domain("OLLA step", step_up));
        }
        Ok(Self { offset: 0.0, target_bler, step_up, limit: context_max as f64 })
    }

    pub fn step_down(&self) -> f64 {
        self.step_up * self.target_bler / (1.0 - self.target_bler)
    }
}

pub fn olla_update(state: OllaState, ack: bool) -> OllaState {
    let delta = if ack { state.step_down() } else { -state.step_up };
    OllaState { offset: (state.offset + delta).clamp(-state.limit, state.limit), ..state }
}

/// Largest MCS meeting the target at `x_effective`, or MCS 1 when none does.
pub fn illa_select(config: &EnvConfig, x_effective: f64, target_bler: f64) -> Action {
    let x = x_effective.clamp(0.0, (config.context_max - 1) as f64);
    config
        .actions()
        .rev()
        .find(|&a| config.success_prob_unchecked(x, a) >= 1.0 - target_bler)
        .unwrap_or(Action(1))
}

pub struct OllaPolicy {
    config: EnvConfig,
    pub state: OllaState,
}

impl OllaPolicy {
    pub fn new(config: &EnvConfig, target_bler: f64, step_up: f64) -> Result<Self> {
        Ok(Self { config: config.clone(), state: OllaState::new(target_bler, step_up, config.context_max)? })
    }
}

impl Policy for OllaPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        illa_select(&self.config, obs.x as f64 + self.state.offset, self.state.target_bler)
    }

    fn observe(&mut self, tr: &Transition) {
        self.state = olla_update(self.state, tr.success());
    }
}
