use super::fit::train_offline;
use super::{AgentConfig, AgentKind, ValueAgent};
use crate::dataset::Transition;
use crate::env::EnvConfig;
use crate::error::Result;

/// Actions whose behaviour probability, relative to the most likely action,
/// exceeds `tau`. The most likely action is always kept.
pub fn bcq_action_filter(probs: &[f64], tau: f64) -> Vec<usize> {
    let (best, max) = probs
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    (0..probs.len()).filter(|&a| a == best || probs[a] / max > tau).collect()
}

/// Discrete batch-constrained Q-learning with a joint Q and behaviour head.
pub fn bcq_train(data: &[Transition], env: &EnvConfig, config: &AgentConfig) -> Result<ValueAgent> {
    train_offline(AgentKind::Bcq, data, env, config)
}
