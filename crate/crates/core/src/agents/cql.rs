use super::fit::train_offline;
use super::{AgentConfig, AgentKind, ValueAgent};
use crate::dataset::Transition;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Bellman error plus `alpha` times the batch mean of
/// `logsumexp_a Q(s, a) - Q(s, a_data)`.
pub fn cql_loss(q_values: &Tensor, data_actions: &[usize], bellman_error: f64, alpha: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::domain("cql alpha", alpha));
    }
    if data_actions.len() != q_values.rows || data_actions.iter().any(|&a| a >= q_values.cols) {
        return Err(Error::shape("cql_loss", format!("{} actions for {:?}", data_actions.len(), q_values.shape())));
    }
    if alpha == 0.0 {
        return Ok(bellman_error);
    }
    let gap: f64 = data_actions
        .iter()
        .enumerate()
        .map(|(r, &a)| {
            let row = q_values.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|q| (q - m).exp()).sum::<f64>().ln() - row[a]
        })
        .sum();
    Ok(bellman_error + alpha * gap / data_actions.len() as f64)
}

/// Conservative Q-learning: the TD loss plus the [`cql_loss`] penalty.
pub fn cql_train(data: &[Transition], env: &EnvConfig, config: &AgentConfig) -> Result<ValueAgent> {
    train_offline(AgentKind::Cql, data, env, config)
}
