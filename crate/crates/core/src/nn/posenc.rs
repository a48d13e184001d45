//! Position information for the sequence model.
//!
//! * `BE`: learned embedding of the step index inside the window.
//! * `LT`: learned affine map of the transmission-time offset.
//! * `CT`: fixed sinusoid of the transmission-time offset.
//!
//! Both time-based encodings consume `Δt / 100`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId, ParamStore};
use super::layers::{Embedding, Linear};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_CT_CONSTANT: f64 = 10_000.0;
const TIME_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosEncodingKind {
    #[serde(rename = "BE")]
    Be,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "CT")]
    Ct,
}

impl std::str::FromStr for PosEncodingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "BE" => Ok(Self::Be),
            "LT" => Ok(Self::Lt),
            "CT" => Ok(Self::Ct),
            _ => Err(format!("unknown positional encoding {s:?}")),
        }
    }
}

/// `PE(Δt, k) = sin((Δt/100) / C^(k/d))` for even `k` and
/// `cos((Δt/100) / C^((k-1)/d))` for odd `k`.
pub fn sinusoidal(delta_t: &[f64], d_model: usize, c: f64) -> Tensor {
    Tensor::from_fn(delta_t.len(), d_model, |r, k| {
        let even = k - k % 2;
        let arg = (delta_t[r] / TIME_SCALE) / c.powf(even as f64 / d_model as f64);
        if k % 2 == 0 { arg.sin() } else { arg.cos() }
    })
}

#[derive(Clone, Debug)]
pub enum PositionalEncoding {
    Be(Embedding),
    Lt(Linear),
    Ct { c: f64, d_model: usize },
}

impl PositionalEncoding {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        kind: PosEncodingKind,
        max_positions: usize,
        d_model: usize,
        c: f64,
        rng: &mut R,
    ) -> Self {
        match kind {
            PosEncodingKind::Be => Self::Be(Embedding::new(ps, "pos.be", max_positions, d_model, 0.02, rng)),
            PosEncodingKind::Lt => Self::Lt(Linear::new(ps, "pos.lt", 1, d_model, rng)),
            PosEncodingKind::Ct => Self::Ct { c, d_model },
        }
    }

    /// One row per token. `positions` are step indices, `delta_t` raw TTI offsets.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, positions: &[usize], delta_t: &[f64]) -> Result<NodeId> {
        match self {
            Self::Be(e) => e.forward(g, ps, positions.to_vec()),
            Self::Lt(l) => {
                let x = g.input(Tensor::new(delta_t.len(), 1, delta_t.iter().map(|d| d / TIME_SCALE).collect()));
                l.forward(g, ps, x)
            }
            Self::Ct { c, d_model } => Ok(g.input(sinusoidal(delta_t, *d_model, *c))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sinusoid_values() {
        let pe = sinusoidal(&[0.0, 100.0], 8, DEFAULT_CT_CONSTANT);
        for k in 0..8 {
            assert_eq!(pe.get(0, k), if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.get(1, 0) - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((pe.get(1, 1) - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn zero_linear_time_encoding() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pe = PositionalEncoding::new(&mut ps, PosEncodingKind::Lt, 4, 6, DEFAULT_CT_CONSTANT, &mut rng);
        for p in ps.iter_mut() {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let out = pe.forward(&mut g, &ps, &[0, 1, 2], &[0.0, 35.0, 700.0]).unwrap();
        assert!(g.value(out).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("ct".parse::<PosEncodingKind>().unwrap(), PosEncodingKind::Ct);
        assert!("xx".parse::<PosEncodingKind>().is_err());
    }
}
