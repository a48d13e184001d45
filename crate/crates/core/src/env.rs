//! Toy link-adaptation environment.
//!
//! Each packet is retransmitted until it is acknowledged or until its last
//! allowed attempt fails. The retransmission index `k` is the MDP state; a
//! channel-quality context `x` is drawn uniformly at every transmission and
//! drives the success probability `tanh(x / (18 a))` of MCS index `a`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::dataset::Transition;
use crate::error::{Error, Result};
use crate::policy::Policy;

/// 1-based MCS index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub u16);

impl Action {
    pub fn from_index(index: usize) -> Self {
        Action(index as u16 + 1)
    }

    /// Zero-based position in action-valued arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub context_max: u32,
    /// Failure penalty coefficient.
    pub beta: f64,
    /// TTIs between a transmission and its ACK/NACK.
    pub harq_delay: u64,
    pub n_harq_processes: usize,
    pub n_cqi: usize,
    /// Lower clamp on the success probability. Zero leaves the dynamics
    /// untouched; one turns every transmission into a success.
    pub success_floor: f64,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 28,
            context_max: 500,
            beta: 0.5,
            harq_delay: 1,
            n_harq_processes: 1,
            n_cqi: 15,
            success_floor: 0.0,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_states", self.n_states as u64),
            ("n_actions", self.n_actions as u64),
            ("context_max", self.context_max as u64),
            ("harq_delay", self.harq_delay),
            ("n_harq_processes", self.n_harq_processes as u64),
            ("n_cqi", self.n_cqi as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("env.{name} must be at least 1")));
            }
        }
        if self.n_actions > u16::MAX as usize {
            return Err(Error::Config("env.n_actions too large".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("env.beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.success_floor) {
            return Err(Error::Config("env.success_floor must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn check_action(&self, a: Action) -> Result<()> {
        if a.0 == 0 || a.0 as usize > self.n_actions {
            return Err(Error::domain("action", a.0));
        }
        Ok(())
    }

    pub fn check_context(&self, x: u32) -> Result<()> {
        if x >= self.context_max {
            return Err(Error::domain("context", x));
        }
        Ok(())
    }

    /// Probability that MCS `a` is decoded at context `x`.
    pub fn success_probability(&self, x: u32, a: Action) -> Result<f64> {
        self.check_context(x)?;
        self.check_action(a)?;
        Ok(self.success_prob_unchecked(x as f64, a))
    }

    pub(crate) fn success_prob_unchecked(&self, x: f64, a: Action) -> f64 {
        (x / (18.0 * a.0 as f64)).tanh().max(self.success_floor)
    }

    pub fn success_reward(&self, a: Action) -> f64 {
        (a.0 as f64 / 28.0).tanh()
    }

    /// Penalty for a failed attempt at retransmission index `k`.
    pub fn failure_reward(&self, k: usize) -> f64 {
        -self.beta * (k as f64 + 1.0)
    }

    pub fn cqi(&self, x: u32) -> usize {
        (x as u64 * self.n_cqi as u64 / self.context_max as u64) as usize
    }

    /// Retransmission index after a failure at `k`; `None` once the packet is dropped.
    pub fn next_attempt(&self, k: usize) -> Option<usize> {
        (k + 1 < self.n_states).then_some(k + 1)
    }

    pub fn actions(&self) -> impl DoubleEndedIterator<Item = Action> {
        (1..=self.n_actions as u16).map(Action)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    /// Retransmission index of the current packet.
    pub k: usize,
    pub x: u32,
    pub cqi: usize,
    /// TTI of the transmission this observation is used for.
    pub t: u64,
    pub packet_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub success: bool,
    pub next_obs: Observation,
    pub packet_terminal: bool,
    pub feedback_time: u64,
}

/// Single-threaded environment state machine.
#[derive(Clone, Debug)]
pub struct LaEnv {
    config: EnvConfig,
    rng: ChaCha8Rng,
    next_packet_id: u64,
}

impl LaEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self { config, rng, next_packet_id: 0 })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn sample_context(&mut self) -> u32 {
        self.rng.gen_range(0..self.config.context_max)
    }

    /// First-attempt observation for a fresh packet at TTI `t`.
    pub fn new_packet(&mut self, t: u64) -> Observation {
        let packet_id = self.next_packet_id;
        self.next_packet_id += 1;
        let x = self.sample_context();
        Observation { k: 0, x, cqi: self.config.cqi(x), t, packet_id }
    }

    fn validate_obs(&self, obs: &Observation) -> Result<()> {
        if obs.k >= self.config.n_states {
            return Err(Error::domain("retransmission index", obs.k));
        }
        self.config.check_context(obs.x)
    }

    /// Transmits with MCS `a` and samples the ACK/NACK.
    pub fn step(&mut self, obs: &Observation, a: Action) -> Result<StepOutcome> {
        self.validate_obs(obs)?;
        self.config.check_action(a)?;
        let p = self.config.success_prob_unchecked(obs.x as f64, a);
        let success = self.rng.gen::<f64>() < p;
        Ok(self.resolve(obs, a, success))
    }

    /// Like [`LaEnv::step`] with the decoding result forced.
    pub fn step_with_outcome(&mut self, obs: &Observation, a: Action, success: bool) -> Result<StepOutcome> {
        self.validate_obs(obs)?;
        self.config.check_action(a)?;
        Ok(self.resolve(obs, a, success))
    }

    fn resolve(&mut self, obs: &Observation, a: Action, success: bool) -> StepOutcome {
        let feedback_time = obs.t + self.config.harq_delay;
        let (reward, next_k) = if success {
            (self.config.success_reward(a), None)
        } else {
            (self.config.failure_reward(obs.k), self.config.next_attempt(obs.k))
        };
        let packet_terminal = next_k.is_none();
        let next_obs = match next_k {
            Some(k) => {
                let x = self.sample_context();
                Observation { k, x, cqi: self.config.cqi(x), t: feedback_time, packet_id: obs.packet_id }
            }
            None => self.new_packet(feedback_time),
        };
        StepOutcome { reward, success, next_obs, packet_terminal, feedback_time }
    }
}

struct HarqProcess {
    obs: Observation,
    ready_at: u64,
}

/// Drives `policy` for `horizon` TTIs and returns the transmissions in TTI order.
///
/// At most one transmission happens per TTI. HARQ processes are served
/// round-robin and a process may transmit only once the feedback of its
/// previous transmission has arrived. Feedback is handed to the policy at
/// its `t_r`, before the transmission of that TTI.
pub fn run_scheduler(config: &EnvConfig, policy: &mut dyn Policy, horizon: u64) -> Result<Vec<Transition>> {
    let mut env = LaEnv::new(config.clone())?;
    let seed_id = config.rng_seed as u32;
    let delay = config.harq_delay;
    let mut procs: Vec<HarqProcess> =
        (0..config.n_harq_processes).map(|_| HarqProcess { obs: env.new_packet(0), ready_at: 0 }).collect();
    let mut pending: VecDeque<Transition> = VecDeque::new();
    let mut out = Vec::with_capacity(horizon as usize);
    let mut next_proc = 0;

    for t in 0..horizon {
        while pending.front().is_some_and(|tr| tr.t_r <= t) {
            let tr = pending.pop_front().expect("front checked");
            policy.observe(&tr);
        }
        let n = procs.len();
        let Some(p) = (0..n).map(|i| (next_proc + i) % n).find(|&p| procs[p].ready_at <= t) else {
            continue;
        };
        let mut obs = procs[p].obs;
        obs.t = t;
        let action = policy.act(&obs);
        let outcome = env.step(&obs, action)?;
        let tr = Transition {
            obs,
            action,
            reward: outcome.reward,
            next_obs: outcome.next_obs,
            packet_id: obs.packet_id,
            attempt_index: obs.k,
            t_a: t,
            t_r: t + delay,
            packet_terminal: outcome.packet_terminal,
            seed_id,
        };
        procs[p] = HarqProcess { obs: outcome.next_obs, ready_at: t + delay };
        next_proc = (p + 1) % n;
        pending.push_back(tr.clone());
        out.push(tr);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FnPolicy;

    fn obs(k: usize, x: u32) -> Observation {
        Observation { k, x, cqi: EnvConfig::default().cqi(x), t: 0, packet_id: 0 }
    }

    #[test]
    fn success_probability_values() {
        let c = EnvConfig::default();
        assert_eq!(c.success_probability(0, Action(7)).unwrap(), 0.0);
        // tanh(1), tanh(0.5)
        assert!((c.success_probability(180, Action(10)).unwrap() - 0.761_594_155_955_764_9).abs() < 1e-15);
        assert!((c.success_probability(90, Action(10)).unwrap() - 0.462_117_157_260_009_8).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let c = EnvConfig::default();
        assert!(c.success_probability(500, Action(1)).is_err());
        assert!(c.success_probability(10, Action(0)).is_err());
        assert!(c.success_probability(10, Action(29)).is_err());
        let mut env = LaEnv::new(c).unwrap();
        assert!(env.step(&obs(5, 10), Action(1)).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        for bad in [
            EnvConfig { n_states: 0, ..Default::default() },
            EnvConfig { harq_delay: 0, ..Default::default() },
            EnvConfig { n_harq_processes: 0, ..Default::default() },
            EnvConfig { beta: -1.0, ..Default::default() },
        ] {
            assert!(LaEnv::new(bad).is_err());
        }
    }

    #[test]
    fn failure_and_success_transitions() {
        let mut env = LaEnv::new(EnvConfig::default()).unwrap();
        assert_eq!(env.new_packet(0).packet_id, 0);
        let o = env.step_with_outcome(&obs(2, 100), Action(5), false).unwrap();
        assert_eq!(o.reward, -1.5);
        assert_eq!(o.next_obs.k, 3);
        assert!(!o.packet_terminal);

        let o = env.step_with_outcome(&obs(4, 100), Action(5), false).unwrap();
        assert_eq!(o.next_obs.k, 0);
        assert!(o.packet_terminal);
        assert_ne!(o.next_obs.packet_id, 0);

        let o = env.step_with_outcome(&obs(1, 100), Action(28), true).unwrap();
        assert!((o.reward - 0.761_594_155_955_764_9).abs() < 1e-15);
        assert_eq!(o.next_obs.k, 0);
        assert!(o.packet_terminal);
        assert_eq!(o.feedback_time, 1);
    }

    #[test]
    fn cqi_buckets() {
        let c = EnvConfig::default();
        assert_eq!(c.cqi(0), 0);
        assert_eq!(c.cqi(33), 0);
        assert_eq!(c.cqi(34), 1);
        assert_eq!(c.cqi(499), 14);
    }

    #[test]
    fn zero_horizon_is_empty() {
        let mut p = FnPolicy(|_: &Observation| Action(1));
        assert!(run_scheduler(&EnvConfig::default(), &mut p, 0).unwrap().is_empty());
    }

    #[test]
    fn single_process_matches_plain_loop() {
        let config = EnvConfig { rng_seed: 17, ..Default::default() };
        let choose = |o: &Observation| Action::from_index((o.x as usize / 20 + o.k) % 28);
        let stream = run_scheduler(&config, &mut FnPolicy(choose), 2_000).unwrap();

        let mut env = LaEnv::new(config.clone()).unwrap();
        let mut o = env.new_packet(0);
        for (t, tr) in stream.iter().enumerate() {
            let a = choose(&o);
            let out = env.step(&o, a).unwrap();
            assert_eq!(tr.obs, o);
            assert_eq!(tr.action, a);
            assert_eq!(tr.reward, out.reward);
            assert_eq!(tr.t_a, t as u64);
            assert_eq!(tr.t_r, t as u64 + 1);
            assert_eq!(tr.packet_terminal, out.packet_terminal);
            o = out.next_obs;
        }
    }

    #[test]
    fn overlapping_packets_with_long_delay() {
        let config = EnvConfig { harq_delay: 7, n_harq_processes: 2, ..Default::default() };
        let stream = run_scheduler(&config, &mut FnPolicy(|_: &Observation| Action(3)), 40).unwrap();
        assert_ne!(stream[0].packet_id, stream[1].packet_id);
        assert!(stream[1].t_a < stream[0].t_r);
        for w in stream.windows(2) {
            assert!(w[0].t_a < w[1].t_a);
        }
        for tr in &stream {
            assert_eq!(tr.t_r, tr.t_a + 7);
            assert!(tr.attempt_index < config.n_states);
        }
    }
}
