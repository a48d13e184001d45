//! Decision transformer over link-adaptation transmissions.
//!
//! Every transmission becomes three tokens in the order (ω, state, action).
//! The action head is read at state tokens. Attention follows the
//! delayed-feedback mask, so a transmission never sees another packet
//! whose ACK/NACK had not yet arrived when it was scheduled.

mod infer;
mod train;

pub use infer::{ConditioningTargets, DtPolicy, OmegaSchedule};
pub use train::{step_omegas, train, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::agents::ObservationEncoder;
use crate::dataset::{attention_mask, temporal_offsets, Step};
use crate::env::{Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::layers::{uniform_limit_for_std, Activation, Block, LayerNorm, Linear};
use crate::nn::posenc::{PosEncodingKind, PositionalEncoding, DEFAULT_CT_CONSTANT};
use crate::nn::{checkpoint, Graph, NodeId, ParamStore, Tensor};

pub const TOKENS_PER_STEP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConditioningKind {
    /// Per-packet return-to-go.
    Vanilla,
    /// Discounted average of upcoming rewards over a fixed window.
    Davg,
    /// Per-CQI target returns; trained on per-packet returns.
    Cctr,
}

impl std::str::FromStr for ConditioningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VANILLA" => Ok(Self::Vanilla),
            "DAVG" => Ok(Self::Davg),
            "CCTR" => Ok(Self::Cctr),
            _ => Err(Error::Config(format!("unknown conditioning {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningSpec {
    pub kind: ConditioningKind,
    /// 1.0 for per-packet returns and 0.8 for DAVG when unset.
    pub gamma: Option<f64>,
    /// Quantile of the training returns used as the inference target.
    pub quantile: f64,
    /// DAVG window.
    pub window: usize,
    /// Explicit inference target; overrides `quantile`.
    pub target: Option<f64>,
}

impl Default for ConditioningSpec {
    fn default() -> Self {
        Self { kind: ConditioningKind::Vanilla, gamma: None, quantile: 0.5, window: 35, target: None }
    }
}

impl ConditioningSpec {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(match self.kind {
            ConditioningKind::Davg => 0.8,
            ConditioningKind::Vanilla | ConditioningKind::Cctr => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma();
        let ok = match self.kind {
            ConditioningKind::Davg => g > 0.0 && g < 1.0,
            _ => g > 0.0 && g <= 1.0,
        };
        if !ok {
            return Err(Error::Config(format!("conditioning gamma {g} out of range for {:?}", self.kind)));
        }
        if self.window == 0 {
            return Err(Error::Config("conditioning window must be >= 1".into()));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::Config(format!("conditioning quantile {} outside (0, 1]", self.quantile)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    /// The K most recent transmissions.
    Recent,
    /// Every attempt of the `n_packets` most recent packets.
    Consecutive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub activation: Activation,
    /// Window length in transmissions; `min(32, n_states * n_packets)` when unset.
    pub context: Option<usize>,
    pub n_packets: usize,
    pub trajectory: TrajectoryMode,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub pos_encoding: PosEncodingKind,
    pub ct_constant: f64,
    pub conditioning: ConditioningSpec,
    pub seed: u64,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 8,
            d_model: 64,
            activation: Activation::Gelu,
            context: None,
            n_packets: 4,
            trajectory: TrajectoryMode::Recent,
            steps: 30_000,
            lr: 1e-4,
            batch_size: 64,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            pos_encoding: PosEncodingKind::Ct,
            ct_constant: DEFAULT_CT_CONSTANT,
            conditioning: ConditioningSpec::default(),
            seed: 0,
        }
    }
}

impl DtConfig {
    /// Window capacity in steps.
    pub fn capacity(&self, n_states: usize) -> usize {
        match self.trajectory {
            TrajectoryMode::Recent => self.context.unwrap_or((n_states * self.n_packets).min(32)),
            TrajectoryMode::Consecutive => n_states * self.n_packets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads)));
        }
        if self.n_layers == 0 || self.batch_size == 0 || self.n_packets == 0 || self.context == Some(0) {
            return Err(Error::Config("dt needs n_layers, batch_size, n_packets and context >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("dt lr and weight_decay must be >= 0".into()));
        }
        self.conditioning.validate()
    }
}

/// What the model sees of one transmission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInput {
    pub obs: Observation,
    /// `None` for the transmission being decided.
    pub action: Option<Action>,
    pub omega: f64,
    pub packet_id: u64,
    pub t_a: u64,
    pub t_r: u64,
}

/// The items of `history` that form the window ending at its last item.
pub fn select_window<'a>(history: &'a [StepInput], config: &DtConfig, capacity: usize) -> Vec<&'a StepInput> {
    let mut out: Vec<&StepInput> = match config.trajectory {
        TrajectoryMode::Recent => history[history.len().saturating_sub(capacity)..].iter().collect(),
        TrajectoryMode::Consecutive => {
            let mut seen: Vec<u64> = Vec::new();
            let mut picked = Vec::new();
            for it in history.iter().rev() {
                if !seen.contains(&it.packet_id) {
                    if seen.len() == config.n_packets {
                        break;
                    }
                    seen.push(it.packet_id);
                }
                picked.push(it);
                if picked.len() == capacity {
                    break;
                }
            }
            picked.reverse();
            picked
        }
    };
    out.truncate(capacity);
    out
}

/// Token features, positions and the token-level mask of one window.
#[derive(Clone, Debug)]
pub struct Tokenized {
    pub features: Tensor,
    pub positions: Vec<usize>,
    pub delta_t: Vec<f64>,
    pub mask: Vec<bool>,
    pub steps: Vec<Step>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Row of the state token of step `s`.
    pub fn state_row(s: usize) -> usize {
        s * TOKENS_PER_STEP + 1
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelConfig {
    dt: DtConfig,
    encoder: ObservationEncoder,
    n_actions: usize,
}

#[derive(Clone, Debug)]
pub struct DtModel {
    pub config: DtConfig,
    pub encoder: ObservationEncoder,
    pub n_actions: usize,
    pub capacity: usize,
    pub params: ParamStore,
    embed: Linear,
    pos: PositionalEncoding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

impl DtModel {
    pub fn new(env: &EnvConfig, config: &DtConfig) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let encoder = ObservationEncoder::new(env);
        let capacity = config.capacity(env.n_states);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore::new();
        let d = config.d_model;
        let width = 1 + encoder.width() + env.n_actions + TOKENS_PER_STEP;
        let embed = Linear::with_limit(&mut ps, "embed", width, d, uniform_limit_for_std(0.02), &mut rng);
        let pos = PositionalEncoding::new(&mut ps, config.pos_encoding, capacity, d, config.ct_constant, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|i| Block::new(&mut ps, &format!("block.{i}"), d, config.n_heads, config.activation, &mut rng))
            .collect();
        let ln_f = LayerNorm::new(&mut ps, "ln_f", d);
        let head = Linear::with_limit(&mut ps, "head", d, env.n_actions, uniform_limit_for_std(0.02), &mut rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            n_actions: env.n_actions,
            capacity,
            params: ps,
            embed,
            pos,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn feature_width(&self) -> usize {
        1 + self.encoder.width() + self.n_actions + TOKENS_PER_STEP
    }

    /// Left-pads `items` to the model's window and lays out its tokens.
    pub fn tokenize(&self, items: &[&StepInput]) -> Tokenized {
        let items = &items[items.len().saturating_sub(self.capacity)..];
        let pad = self.capacity - items.len();
        let mut steps = vec![Step::pad(); pad];
        steps.extend(items.iter().enumerate().map(|(i, it)| Step {
            source: Some(i),
            omega: it.omega,
            packet_id: it.packet_id,
            t_a: it.t_a,
            t_r: it.t_r,
            delta_t: 0,
        }));
        let offsets = temporal_offsets(&steps);
        for (s, dt) in steps.iter_mut().zip(offsets) {
            s.delta_t = dt;
        }
        let mask = attention_mask(&steps).expand_to_tokens(TOKENS_PER_STEP).as_slice().to_vec();

        let w = self.feature_width();
        let (enc_at, act_at, type_at) = (1, 1 + self.encoder.width(), 1 + self.encoder.width() + self.n_actions);
        let n = self.capacity * TOKENS_PER_STEP;
        let mut features = Tensor::zeros(n, w);
        for (i, it) in items.iter().enumerate() {
            let s = pad + i;
            let row = |j: usize| (s * TOKENS_PER_STEP + j) * w;
            let r = row(0);
            features.data[r] = it.omega;
            features.data[r + type_at] = 1.0;
            let r = row(1);
            self.encoder.encode_into(&it.obs, &mut features.data[r + enc_at..r + act_at]);
            features.data[r + type_at + 1] = 1.0;
            let r = row(2);
            if let Some(a) = it.action {
                features.data[r + act_at + a.index()] = 1.0;
            }
            features.data[r + type_at + 2] = 1.0;
        }
        let positions = (0..n).map(|t| t / TOKENS_PER_STEP).collect();
        let delta_t = (0..n).map(|t| steps[t / TOKENS_PER_STEP].delta_t as f64).collect();
        Tokenized { features, positions, delta_t, mask, steps }
    }

    /// Action logits at the state tokens listed in `rows` (indices into the
    /// concatenated token rows of `batch`).
    pub fn forward(&self, g: &mut Graph, batch: &[Tokenized], rows: Vec<usize>) -> Result<NodeId> {
        let seq = self.capacity * TOKENS_PER_STEP;
        let w = self.feature_width();
        let mut data = Vec::with_capacity(batch.len() * seq * w);
        let (mut positions, mut delta_t, mut mask) = (Vec::new(), Vec::new(), Vec::new());
        for t in batch {
            data.extend_from_slice(&t.features.data);
            positions.extend_from_slice(&t.positions);
            delta_t.extend_from_slice(&t.delta_t);
            mask.extend_from_slice(&t.mask);
        }
        let x = g.input(Tensor::new(batch.len() * seq, w, data));
        let h = self.embed.forward(g, &self.params, x)?;
        let p = self.pos.forward(g, &self.params, &positions, &delta_t)?;
        let mut h = g.add(h, p)?;
        for b in &self.blocks {
            h = b.forward(g, &self.params, h, &mask, batch.len(), seq)?;
        }
        let h = g.gather_rows(h, rows)?;
        let h = self.ln_f.forward(g, &self.params, h)?;
        self.head.forward(g, &self.params, h)
    }

    /// Logits for the last item of `items`, whose action is being chosen.
    pub fn action_logits(&self, items: &[StepInput]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Err(Error::EmptyDataset("no step to decide".into()));
        }
        let tok = self.tokenize(&select_window(items, &self.config, self.capacity));
        let mut g = Graph::new();
        let out = self.forward(&mut g, std::slice::from_ref(&tok), vec![Tokenized::state_row(self.capacity - 1)])?;
        Ok(g.value(out).data.clone())
    }

    pub fn save(&self, stem: &Path, config_hash: &str) -> Result<()> {
        let mc = ModelConfig { dt: self.config.clone(), encoder: self.encoder, n_actions: self.n_actions };
        checkpoint::save(stem, &self.params, "dt", config_hash, serde_json::to_value(mc).expect("config serializes"))
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
        let mut model = DtModel::new(&env, &mc.dt)?;
        checkpoint::load_into(stem, &mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DtConfig {
        DtConfig { n_layers: 1, n_heads: 2, d_model: 8, context: Some(1), ..DtConfig::default() }
    }

    fn item(pid: u64, k: usize, t_a: u64, t_r: u64) -> StepInput {
        let obs = Observation { k, x: 100, cqi: 3, t: t_a, packet_id: pid };
        StepInput { obs, action: Some(Action(5)), omega: 0.5, packet_id: pid, t_a, t_r }
    }

    #[test]
    fn one_step_layout() {
        let m = DtModel::new(&EnvConfig::default(), &small()).unwrap();
        let tok = m.tokenize(&[&item(0, 0, 0, 1)]);
        assert_eq!(tok.len(), 3);
        let expect = [true, false, false, true, true, false, true, true, true];
        assert_eq!(tok.mask, expect);
        assert_eq!(tok.features.get(0, 0), 0.5);
        assert_eq!(tok.features.get(2, 1 + 21 + 4), 1.0);
    }

    #[test]
    fn pads_are_inert() {
        let cfg = DtConfig { context: Some(4), ..small() };
        let m = DtModel::new(&EnvConfig::default(), &cfg).unwrap();
        let tok = m.tokenize(&[]);
        assert!(tok.mask.iter().all(|&b| !b));
        assert!(tok.features.data.iter().all(|&v| v == 0.0));
        let tok = m.tokenize(&[&item(0, 0, 0, 1), &item(1, 0, 1, 2)]);
        for t in 0..6 {
            assert!((0..12).all(|k| !tok.mask[t * 12 + k] && !tok.mask[k * 12 + t]));
        }
    }

    #[test]
    fn pending_packet_hidden_from_later_packet() {
        let cfg = DtConfig { context: Some(2), ..small() };
        let m = DtModel::new(&EnvConfig::default(), &cfg).unwrap();
        let tok = m.tokenize(&[&item(1, 0, 0, 7), &item(2, 0, 4, 11)]);
        for q in 3..6 {
            for k in 0..3 {
                assert!(!tok.mask[q * 6 + k]);
            }
        }
        assert!(tok.steps.iter().map(|s| s.delta_t).eq([0, 4]));
    }

    #[test]
    fn consecutive_window_keeps_whole_packets() {
        let cfg = DtConfig { trajectory: TrajectoryMode::Consecutive, n_packets: 2, ..small() };
        let h = [item(0, 0, 0, 1), item(1, 0, 1, 2), item(1, 1, 2, 3), item(1, 2, 3, 4), item(2, 0, 4, 5)];
        let w = select_window(&h, &cfg, cfg.capacity(5));
        assert!(w.iter().map(|s| s.packet_id).eq([1, 1, 1, 2]));
        let w = select_window(&h[..1], &cfg, 10);
        assert_eq!(w.len(), 1);
        let rc = DtConfig { context: Some(3), ..small() };
        assert!(select_window(&h, &rc, 3).iter().map(|s| s.t_a).eq([2, 3, 4]));
    }

    #[test]
    fn config_checks() {
        assert!(DtConfig { d_model: 10, n_heads: 4, ..DtConfig::default() }.validate().is_err());
        assert_eq!(DtConfig::default().capacity(5), 20);
        assert_eq!(DtConfig { n_packets: 8, ..DtConfig::default() }.capacity(5), 32);
        assert_eq!(DtConfig { trajectory: TrajectoryMode::Consecutive, ..DtConfig::default() }.capacity(5), 20);
        assert_eq!(ConditioningSpec { kind: ConditioningKind::Davg, ..Default::default() }.gamma(), 0.8);
        assert!(ConditioningSpec { kind: ConditioningKind::Davg, gamma: Some(1.0), ..Default::default() }.validate().is_err());
    }
}
