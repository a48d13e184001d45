//! Windows of transmissions fed to the sequence model.
//!
//! A window holds up to `capacity` steps, left-padded. Each step later becomes
//! three tokens (conditioning, state, action) that share the step's packet
//! id, timing and temporal offset.

use std::collections::HashSet;

use super::Transition;

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Index of the transmission in the source stream; `None` for padding.
    pub source: Option<usize>,
    pub omega: f64,
    pub packet_id: u64,
    pub t_a: u64,
    pub t_r: u64,
    pub delta_t: u64,
}

impl Step {
    pub fn pad() -> Self {
        Step { source: None, omega: 0.0, packet_id: 0, t_a: 0, t_r: 0, delta_t: 0 }
    }

    pub fn is_pad(&self) -> bool {
        self.source.is_none()
    }
}

/// Square boolean matrix; `allowed(q, k)` is true when query `q` may attend key `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub size: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..size * size).map(|i| f(i / size, i % size)).collect();
        Self { size, bits }
    }

    pub fn causal(size: usize) -> Self {
        Self::from_fn(size, |q, k| k <= q)
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.size + key]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Token-level mask for three tokens per step.
    pub fn expand_to_tokens(&self, per_step: usize) -> Self {
        Self::from_fn(self.size * per_step, |q, k| {
            let (qs, ks) = (q / per_step, k / per_step);
            self.allowed(qs, ks) && (qs != ks || k % per_step <= q % per_step)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub steps: Vec<Step>,
    /// Step-level mask.
    pub mask: AttentionMask,
}

impl TokenSequence {
    /// Left-pads `window` (indices into `stream`) up to `capacity` steps and
    /// derives offsets and the mask.
    pub fn from_window(stream: &[Transition], window: &[usize], capacity: usize) -> Self {
        let capacity = capacity.max(window.len());
        let mut steps = vec![Step::pad(); capacity - window.len()];
        steps.extend(window.iter().map(|&i| {
            let t = &stream[i];
            Step { source: Some(i), omega: 0.0, packet_id: t.packet_id, t_a: t.t_a, t_r: t.t_r, delta_t: 0 }
        }));
        let offsets = temporal_offsets(&steps);
        for (s, dt) in steps.iter_mut().zip(offsets) {
            s.delta_t = dt;
        }
        let mask = attention_mask(&steps);
        Self { steps, mask }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn real_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.is_pad()).count()
    }

    pub fn token_mask(&self) -> AttentionMask {
        self.mask.expand_to_tokens(3)
    }
}

/// The `k` most recent transmissions of `stream`.
pub fn build_recent_transmissions(stream: &[Transition], k: usize) -> TokenSequence {
    let k = k.max(1);
    let start = stream.len().saturating_sub(k);
    let window: Vec<usize> = (start..stream.len()).collect();
    TokenSequence::from_window(stream, &window, k)
}

/// Every transmission of the `n_packets` most recent packets, with room for
/// `n_states` attempts per packet.
pub fn build_consecutive_packets(stream: &[Transition], n_packets: usize, n_states: usize) -> TokenSequence {
    let n_packets = n_packets.max(1);
    let mut chosen: HashSet<(u32, u64)> = HashSet::new();
    let mut window = Vec::new();
    for (i, t) in stream.iter().enumerate().rev() {
        let key = (t.seed_id, t.packet_id);
        if !chosen.contains(&key) {
            if chosen.len() == n_packets {
                break;
            }
            chosen.insert(key);
        }
        window.push(i);
    }
    window.reverse();
    TokenSequence::from_window(stream, &window, n_states * n_packets)
}

/// Query step `j` may attend key step `i` when `i <= j`, both are real, and
/// either they belong to the same packet or the key's feedback arrived no
/// later than the query's transmission.
pub fn attention_mask(steps: &[Step]) -> AttentionMask {
    AttentionMask::from_fn(steps.len(), |j, i| {
        let (q, k) = (&steps[j], &steps[i]);
        i <= j && !q.is_pad() && !k.is_pad() && (q.packet_id == k.packet_id || k.t_r <= q.t_a)
    })
}

/// Transmission-time offsets relative to the first real step.
pub fn temporal_offsets(steps: &[Step]) -> Vec<u64> {
    let origin = steps.iter().find(|s| !s.is_pad()).map_or(0, |s| s.t_a);
    steps.iter().map(|s| if s.is_pad() { 0 } else { s.t_a - origin }).collect()
}
