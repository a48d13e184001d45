use super::fit::train_offline;
use super::{AgentConfig, AgentKind, ValueAgent};
use crate::dataset::Transition;
use crate::env::EnvConfig;
use crate::error::Result;

/// Behaviour cloning: a cross-entropy classifier from observation to logged action.
pub fn bc_train(data: &[Transition], env: &EnvConfig, config: &AgentConfig) -> Result<ValueAgent> {
    train_offline(AgentKind::Bc, data, env, config)
}
