use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::{ConditioningKind, ConditioningSpec, DtModel, StepInput};
use super::train::{split_streams, step_omegas};
use crate::dataset::{cctr_targets, group_packets, lower_quantile, rtg_vanilla, CqiTargets, Packet, Transition};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::oracle::argmax_action;
use crate::policy::Policy;

/// How ω is chosen for each transmission at inference time.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaSchedule {
    /// The same ω at every step.
    Fixed(f64),
    /// `initial` at a packet's first attempt, then `(ω - r) / gamma` after
    /// each observed failure.
    PerPacket { initial: f64, gamma: f64 },
    /// Like `PerPacket` with the initial value looked up by first-attempt CQI.
    PerCqi { targets: CqiTargets, gamma: f64 },
}

impl OmegaSchedule {
    pub fn first_attempt(&self, obs: &Observation) -> f64 {
        match self {
            OmegaSchedule::Fixed(w) | OmegaSchedule::PerPacket { initial: w, .. } => *w,
            OmegaSchedule::PerCqi { targets, .. } => targets.target(obs.cqi),
        }
    }

    /// ω for the next attempt after `reward` was observed at `omega`.
    pub fn after_failure(&self, omega: f64, reward: f64) -> f64 {
        match self {
            OmegaSchedule::Fixed(w) => *w,
            OmegaSchedule::PerPacket { gamma, .. } | OmegaSchedule::PerCqi { gamma, .. } => (omega - reward) / gamma,
        }
    }
}

/// Training-return statistics that conditioning targets are drawn from.
#[derive(Clone, Debug)]
pub struct ConditioningTargets {
    /// First-attempt per-packet returns of complete packets.
    pub first_attempt: Vec<f64>,
    /// Every step's DAVG value.
    pub davg: Vec<f64>,
    packets: Vec<Packet>,
    n_cqi: usize,
    packet_gamma: f64,
}

impl ConditioningTargets {
    pub fn from_dataset(data: &[Transition], spec: &ConditioningSpec, n_cqi: usize) -> Result<Self> {
        let packets = group_packets(data);
        let packet_gamma = match spec.kind {
            ConditioningKind::Davg => 1.0,
            _ => spec.gamma(),
        };
        let first_attempt = packets
            .iter()
            .filter(|p| p.is_complete())
            .map(|p| rtg_vanilla(&p.rewards(), 0, packet_gamma))
            .collect::<Result<Vec<_>>>()?;
        let davg = if spec.kind == ConditioningKind::Davg {
            let mut v = Vec::with_capacity(data.len());
            for s in split_streams(data) {
                v.extend(step_omegas(s, spec)?);
            }
            v
        } else {
            Vec::new()
        };
        if first_attempt.is_empty() {
            return Err(Error::EmptyDataset("no complete packets to condition on".into()));
        }
        Ok(Self { first_attempt, davg, packets, n_cqi, packet_gamma })
    }

    /// Inference schedule for conditioning `kind` at quantile `q`; an explicit
    /// `target` replaces the quantile for VANILLA and DAVG.
    pub fn schedule(&self, kind: ConditioningKind, q: f64, target: Option<f64>) -> Result<OmegaSchedule> {
        Ok(match kind {
            ConditioningKind::Vanilla => OmegaSchedule::PerPacket {
                initial: target.map_or_else(|| lower_quantile(&self.first_attempt, q), Ok)?,
                gamma: self.packet_gamma,
            },
            ConditioningKind::Davg => OmegaSchedule::Fixed(target.map_or_else(|| lower_quantile(&self.davg, q), Ok)?),
            ConditioningKind::Cctr => OmegaSchedule::PerCqi {
                targets: cctr_targets(&self.packets, q, self.n_cqi, self.packet_gamma)?,
                gamma: self.packet_gamma,
            },
        })
    }
}

/// Autoregressive DT controller. Keeps the transmissions it has made and
/// learns each outcome only when its feedback arrives.
pub struct DtPolicy {
    model: Arc<DtModel>,
    schedule: OmegaSchedule,
    harq_delay: u64,
    history: VecDeque<StepInput>,
    omega_next: HashMap<u64, f64>,
    omega_used: HashMap<u64, f64>,
    /// ω of every decision, in order.
    pub trace: Vec<f64>,
}

impl DtPolicy {
    pub fn new(model: Arc<DtModel>, schedule: OmegaSchedule, harq_delay: u64) -> Self {
        Self {
            model,
            schedule,
            harq_delay,
            history: VecDeque::new(),
            omega_next: HashMap::new(),
            omega_used: HashMap::new(),
            trace: Vec::new(),
        }
    }

    fn omega_for(&self, obs: &Observation) -> f64 {
        if obs.k == 0 {
            return self.schedule.first_attempt(obs);
        }
        self.omega_next.get(&obs.packet_id).copied().unwrap_or_else(|| self.schedule.first_attempt(obs))
    }

    /// Logits for `obs` given the current history, without recording anything.
    pub fn logits(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        let cur = self.current(obs);
        self.history.push_back(cur);
        let out = self.model.action_logits(self.history.make_contiguous());
        self.history.pop_back();
        out
    }

    fn current(&self, obs: &Observation) -> StepInput {
        StepInput {
            obs: *obs,
            action: None,
            omega: self.omega_for(obs),
            packet_id: obs.packet_id,
            t_a: obs.t,
            t_r: obs.t + self.harq_delay,
        }
    }
}

impl Policy for DtPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        let mut cur = self.current(obs);
        let logits = self.logits(obs).expect("window shapes are fixed by the model");
        let a = argmax_action(&logits);
        cur.action = Some(a);
        self.trace.push(cur.omega);
        self.omega_used.insert(obs.packet_id, cur.omega);
        self.history.push_back(cur);
        let keep = 4 * self.model.capacity;
        while self.history.len() > keep {
            self.history.pop_front();
        }
        a
    }

    fn observe(&mut self, tr: &Transition) {
        let used = self.omega_used.remove(&tr.packet_id);
        if tr.packet_terminal {
            self.omega_next.remove(&tr.packet_id);
        } else if let Some(w) = used {
            self.omega_next.insert(tr.packet_id, self.schedule.after_failure(w, tr.reward));
        }
    }
}
