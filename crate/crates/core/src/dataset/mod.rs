//! Logged transmissions, packets, and everything built from them.

mod io;
pub mod rtg;
pub mod trajectory;

pub use io::{read_dataset, write_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use rtg::{cctr_targets, lower_quantile, rtg_davg, rtg_vanilla, CqiTargets};
pub use trajectory::{
    attention_mask, build_consecutive_packets, build_recent_transmissions, temporal_offsets, AttentionMask,
    Step, TokenSequence,
};

use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};

/// One packet transmission and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub packet_id: u64,
    pub attempt_index: usize,
    /// TTI of the transmission.
    pub t_a: u64,
    /// TTI at which the ACK/NACK and reward become observable.
    pub t_r: u64,
    pub packet_terminal: bool,
    pub seed_id: u32,
}

impl Transition {
    pub fn success(&self) -> bool {
        self.reward > 0.0
    }
}

/// All logged attempts of one packet, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub packet_id: u64,
    pub transitions: Vec<Transition>,
}

impl Packet {
    /// Number of attempts, `T(p)`.
    pub fn termination_step(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_complete(&self) -> bool {
        self.transitions.first().is_some_and(|t| t.attempt_index == 0)
            && self.transitions.last().is_some_and(|t| t.packet_terminal)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn first_cqi(&self) -> usize {
        self.transitions[0].obs.cqi
    }
}

/// Groups a transmission stream into packets ordered by first transmission.
///
/// Packet ids are only unique within one seed's stream.
pub fn group_packets(stream: &[Transition]) -> Vec<Packet> {
    let mut order: Vec<Packet> = Vec::new();
    let mut slot: std::collections::HashMap<(u32, u64), usize> = std::collections::HashMap::new();
    for tr in stream {
        let i = *slot.entry((tr.seed_id, tr.packet_id)).or_insert_with(|| {
            order.push(Packet { packet_id: tr.packet_id, transitions: Vec::new() });
            order.len() - 1
        });
        order[i].transitions.push(tr.clone());
    }
    order
}


#[cfg(test)]
mod tests {
    use super::testutil::tr;
    use super::*;

    #[test]
    fn groups_interleaved_packets() {
        let stream = vec![
            tr(0, 0, -0.5, 0, 2, false),
            tr(1, 0, 0.3, 1, 2, true),
            tr(0, 1, 0.2, 2, 2, true),
        ];
        let packets = group_packets(&stream);
        assert_eq!(packets.len(), 2);
        assert_eq!(packets[0].termination_step(), 2);
        assert_eq!(packets[0].rewards(), vec![-0.5, 0.2]);
        assert!(packets.iter().all(Packet::is_complete));
    }
}
