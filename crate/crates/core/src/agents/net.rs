use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{bcq_action_filter, AgentConfig, AgentKind, ObservationEncoder};
use crate::env::{Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Activation, Graph, Linear, NodeId, ParamStore, Tensor};
use crate::oracle::argmax_action;
use crate::policy::Policy;

#[derive(Clone, Debug)]
pub struct AgentNet {
    pub trunk: Vec<Linear>,
    pub activation: Activation,
    pub q_head: Option<Linear>,
    pub behavior_head: Option<Linear>,
}

/// Outputs of one forward pass: Q-values and behaviour logits, when present.
pub struct NetOutputs {
    pub q: Option<NodeId>,
    pub logits: Option<NodeId>,
}

impl AgentNet {
    pub fn new(ps: &mut ParamStore, kind: AgentKind, input: usize, n_actions: usize, config: &AgentConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_width;
        let trunk = (0..config.layers - 1)
            .map(|i| Linear::new(ps, &format!("trunk.{i}"), if i == 0 { input } else { h }, h, rng))
            .collect();
        let q_head = kind.has_q_head().then(|| Linear::new(ps, "q_head", h, n_actions, rng));
        let behavior_head = kind.has_behavior_head().then(|| Linear::new(ps, "behavior_head", h, n_actions, rng));
        Self { trunk, activation: config.activation, q_head, behavior_head }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NetOutputs> {
        let mut h = x;
        for l in &self.trunk {
            h = l.forward(g, ps, h)?;
            h = self.activation.apply(g, h);
        }
        let q = self.q_head.as_ref().map(|l| l.forward(g, ps, h)).transpose()?;
        let logits = self.behavior_head.as_ref().map(|l| l.forward(g, ps, h)).transpose()?;
        Ok(NetOutputs { q, logits })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelConfig {
    kind: AgentKind,
    encoder: ObservationEncoder,
    n_actions: usize,
    agent: AgentConfig,
}

/// A trained (or freshly initialised) agent network with its parameters.
#[derive(Clone, Debug)]
pub struct ValueAgent {
    pub kind: AgentKind,
    pub net: AgentNet,
    pub params: ParamStore,
    pub encoder: ObservationEncoder,
    pub n_actions: usize,
    pub config: AgentConfig,
}

pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows {
        let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
    }
    out
}

impl ValueAgent {
    pub fn new(kind: AgentKind, env: &EnvConfig, config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let encoder = ObservationEncoder::new(env);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let net = AgentNet::new(&mut params, kind, encoder.width(), env.n_actions, config, &mut rng);
        Ok(Self { kind, net, params, encoder, n_actions: env.n_actions, config: config.clone() })
    }

    /// Q-values and behaviour probabilities for a batch of observations.
    pub fn outputs(&self, obs: &[Observation]) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let mut g = Graph::new();
        let x = g.input(self.encoder.batch(obs.iter()));
        let out = self.net.forward(&mut g, &self.params, x)?;
        let q = out.q.map(|n| g.value(n).clone());
        let probs = out.logits.map(|n| softmax_rows(g.value(n)));
        Ok((q, probs))
    }

    fn choose(&self, q: Option<&[f64]>, probs: Option<&[f64]>) -> Action {
        match (self.kind, q, probs) {
            (AgentKind::Bcq, Some(q), Some(p)) => {
                let allowed = bcq_action_filter(p, self.config.bcq_tau);
                let best = allowed.into_iter().fold(None, |best: Option<usize>, a| match best {
                    Some(b) if q[b] >= q[a] => Some(b),
                    _ => Some(a),
                });
                Action::from_index(best.expect("filter keeps the argmax"))
            }
            (_, Some(q), _) => argmax_action(q),
            (_, None, Some(p)) => argmax_action(p),
            _ => unreachable!("every agent has at least one head"),
        }
    }

    pub fn act_batch(&self, obs: &[Observation]) -> Result<Vec<Action>> {
        let (q, p) = self.outputs(obs)?;
        Ok((0..obs.len())
            .map(|r| self.choose(q.as_ref().map(|t| t.row(r)), p.as_ref().map(|t| t.row(r))))
            .collect())
    }

    pub fn act(&self, obs: &Observation) -> Result<Action> {
        Ok(self.act_batch(std::slice::from_ref(obs))?[0])
    }

    /// The agent's greedy action for every (retransmission index, context).
    pub fn policy_table(&self, env: &EnvConfig) -> Result<TabularPolicy> {
        let obs: Vec<Observation> = (0..env.n_states)
            .flat_map(|k| (0..env.context_max).map(move |x| Observation { k, x, cqi: env.cqi(x), t: 0, packet_id: 0 }))
            .collect();
        let actions = self.act_batch(&obs)?;
        Ok(TabularPolicy { context_max: env.context_max as usize, actions })
    }

    pub fn save(&self, stem: &Path, config_hash: &str) -> Result<()> {
        let mc = ModelConfig { kind: self.kind, encoder: self.encoder, n_actions: self.n_actions, agent: self.config.clone() };
        checkpoint::save(stem, &self.params, self.kind.name(), config_hash, serde_json::to_value(mc).expect("config serializes"))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(stem)?;
        let mc: ModelConfig = serde_json::from_value(manifest.model_config)
            .map_err(|e| Error::Format(format!("{}: {e}", stem.display())))?;
        let env = EnvConfig {
            n_states: mc.encoder.n_states,
            context_max: mc.encoder.context_max,
            n_cqi: mc.encoder.n_cqi,
            n_actions: mc.n_actions,
            ..EnvConfig::default()
        };
        let mut agent = ValueAgent::new(mc.kind, &env, &mc.agent)?;
        checkpoint::load_into(stem, &mut agent.params)?;
        Ok(agent)
    }
}

/// Precomputed action per (retransmission index, context).
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub context_max: usize,
    pub actions: Vec<Action>,
}

impl TabularPolicy {
    pub fn action(&self, k: usize, x: u32) -> Action {
        self.actions[k * self.context_max + x as usize]
    }
}

impl Policy for TabularPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        self.action(obs.k, obs.x)
    }
}
