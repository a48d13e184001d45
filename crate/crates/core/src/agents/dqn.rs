use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fit::{apply_step, optimizer};
use super::{AgentConfig, AgentKind, ReplayBuffer, ValueAgent};
use crate::dataset::Transition;
use crate::env::{Action, EnvConfig, LaEnv};
use crate::error::Result;

/// One-step TD target; the bare reward at the end of an episode.
pub fn td_target(reward: f64, gamma: f64, max_next_q: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// Online DQN with uniform replay and a periodically synced target network.
/// One environment step and one gradient step per iteration once the buffer
/// holds `dqn_learning_starts` transitions.
pub fn dqn_train(env_config: &EnvConfig, config: &AgentConfig) -> Result<ValueAgent> {
    let mut env = LaEnv::new(env_config.clone())?;
    let mut agent = ValueAgent::new(AgentKind::Dqn, env_config, config)?;
    let mut target = agent.clone();
    let mut opt = optimizer(&agent);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xd9));
    let mut buffer = ReplayBuffer::new(config.dqn_buffer_capacity);
    let every = config.target_update_for(AgentKind::Dqn);
    let mut obs = env.new_packet(0);
    for step in 0..config.steps {
        let frac = (step as f64 / config.dqn_epsilon_decay_steps.max(1) as f64).min(1.0);
        let eps = config.dqn_epsilon_start + frac * (config.dqn_epsilon_end - config.dqn_epsilon_start);
        let t = step as u64;
        obs.t = t;
        let action = if rng.gen::<f64>() < eps {
            Action(rng.gen_range(1..=env_config.n_actions as u16))
        } else {
            agent.act(&obs)?
        };
        let out = env.step(&obs, action)?;
        buffer.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.next_obs,
            packet_id: obs.packet_id,
            attempt_index: obs.k,
            t_a: t,
            t_r: out.feedback_time,
            packet_terminal: out.packet_terminal,
            seed_id: env_config.rng_seed as u32,
        });
        obs = out.next_obs;
        if buffer.len() >= config.dqn_learning_starts.max(1) {
            let batch = buffer.sample(config.batch_size, &mut rng);
            apply_step(&mut agent, Some(&target), &mut opt, &batch)?;
        }
        if (step + 1) % every == 0 {
            target.params.copy_values_from(&agent.params);
        }
    }
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{greedy_action, value_iteration};

    #[test]
    fn target_examples() {
        assert!((td_target(1.0, 0.9, 2.0, false) - 2.8).abs() < 1e-15);
        assert_eq!(td_target(1.0, 0.9, 2.0, true), 1.0);
    }

    #[test]
    fn learns_dominant_action() {
        let env = EnvConfig { context_max: 1, n_actions: 2, n_cqi: 1, success_floor: 1.0, ..EnvConfig::default() };
        let q = value_iteration(&env, 0.99, 1e-10).unwrap();
        let mut e = LaEnv::new(env.clone()).unwrap();
        let best = greedy_action(&q, &e.new_packet(0));
        assert_eq!(best, Action(2));
        let cfg = AgentConfig {
            hidden_width: 16,
            steps: 1500,
            lr: Some(1e-3),
            target_update: Some(100),
            dqn_learning_starts: 100,
            dqn_epsilon_decay_steps: 500,
            ..AgentConfig::default()
        };
        let agent = dqn_train(&env, &cfg).unwrap();
        assert_eq!(agent.act(&e.new_packet(0)).unwrap(), best);
    }
}
