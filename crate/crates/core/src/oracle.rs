//! Exact dynamic-programming values for the toy environment.
//!
//! The next context is uniform and independent of everything else, so the
//! Bellman backup only needs the context-averaged state values
//! `V̄(k) = mean_x max_a Q(k, x, a)`.

use rand::Rng;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

use crate::env::{Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::policy::Policy;

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200_000;

const MAGIC: u64 = u64::from_le_bytes(*b"LAQTABLE");
const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub context_max: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    /// Row-major `[k][x][a]`.
    pub values: Vec<f64>,
}

impl QTable {
    fn offset(&self, k: usize, x: usize) -> usize {
        (k * self.context_max + x) * self.n_actions
    }

    pub fn row(&self, k: usize, x: u32) -> &[f64] {
        let o = self.offset(k, x as usize);
        &self.values[o..o + self.n_actions]
    }

    pub fn q(&self, k: usize, x: u32, a: Action) -> f64 {
        self.row(k, x)[a.index()]
    }

    pub fn state_value(&self, k: usize, x: u32) -> f64 {
        self.row(k, x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Context-averaged value of retransmission state `k`.
    pub fn mean_state_value(&self, k: usize) -> f64 {
        (0..self.context_max as u32).map(|x| self.state_value(k, x)).sum::<f64>() / self.context_max as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let header = [
            MAGIC,
            FORMAT_VERSION,
            self.n_states as u64,
            self.context_max as u64,
            self.n_actions as u64,
            self.gamma.to_bits(),
            self.residual.to_bits(),
            checksum(&data),
        ];
        let mut bytes: Vec<u8> = header.iter().flat_map(|h| h.to_le_bytes()).collect();
        bytes.extend_from_slice(&data);
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 64 {
            return Err(Error::Format(format!("{}: truncated q-table header", path.display())));
        }
        let field = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        if field(0) != MAGIC {
            return Err(Error::Format(format!("{}: not a q-table file", path.display())));
        }
        if field(1) != FORMAT_VERSION {
            return Err(Error::Format(format!("{}: unsupported q-table version {}", path.display(), field(1))));
        }
        let (n_states, context_max, n_actions) = (field(2) as usize, field(3) as usize, field(4) as usize);
        let data = &bytes[64..];
        let expected = n_states
            .checked_mul(context_max)
            .and_then(|v| v.checked_mul(n_actions))
            .and_then(|v| v.checked_mul(8));
        if expected != Some(data.len()) {
            return Err(Error::Format(format!("{}: payload length does not match header", path.display())));
        }
        if checksum(data) != field(7) {
            return Err(Error::Format(format!("{}: checksum mismatch", path.display())));
        }
        let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self {
            n_states,
            context_max,
            n_actions,
            gamma: f64::from_bits(field(5)),
            residual: f64::from_bits(field(6)),
            values,
        })
    }
}

fn checksum(data: &[u8]) -> u64 {
    let digest = Sha256::digest(data);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Solves the Bellman optimality equation by repeated full sweeps.
pub fn value_iteration(config: &EnvConfig, gamma: f64, tol: f64) -> Result<QTable> {
    value_iteration_traced(config, gamma, tol, |_| {})
}

/// [`value_iteration`] reporting the sup-norm change of every sweep.
pub fn value_iteration_traced(
    config: &EnvConfig,
    gamma: f64,
    tol: f64,
    mut on_sweep: impl FnMut(f64),
) -> Result<QTable> {
    config.validate()?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", gamma));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance", tol));
    }
    let (n, c, na) = (config.n_states, config.context_max as usize, config.n_actions);
    let actions: Vec<Action> = config.actions().collect();
    let p: Vec<f64> = (0..c)
        .flat_map(|x| actions.iter().map(move |&a| config.success_prob_unchecked(x as f64, a)))
        .collect();
    let r_succ: Vec<f64> = actions.iter().map(|&a| config.success_reward(a)).collect();

    let mut table = QTable { n_states: n, context_max: c, n_actions: na, gamma, residual: f64::INFINITY, values: vec![0.0; n * c * na] };
    let mut v_bar = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        let mut next_v = vec![0.0; n];
        for k in 0..n {
            let fail_next = config.next_attempt(k).unwrap_or(0);
            let on_success_base = gamma * v_bar[0];
            let on_failure = config.failure_reward(k) + gamma * v_bar[fail_next];
            for x in 0..c {
                let o = (k * c + x) * na;
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let ps = p[x * na + a];
                    let q = ps * (r_succ[a] + on_success_base) + (1.0 - ps) * on_failure;
                    residual = residual.max((q - table.values[o + a]).abs());
                    table.values[o + a] = q;
                    best = best.max(q);
                }
                next_v[k] += best;
            }
            next_v[k] /= c as f64;
        }
        v_bar = next_v;
        on_sweep(residual);
        if !residual.is_finite() {
            return Err(Error::NonFinite("value iteration".into()));
        }
        table.residual = residual;
        if residual < tol {
            return Ok(table);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: table.residual })
}

/// Argmax over the Q row, lowest action on ties.
pub fn greedy_action(q: &QTable, obs: &Observation) -> Action {
    argmax_action(q.row(obs.k, obs.x))
}

pub fn argmax_action(row: &[f64]) -> Action {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, obs: &Observation, epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Action::from_index(rng.gen_range(0..q.n_actions))
    } else {
        greedy_action(q, obs)
    }
}

/// ε-greedy controller over a solved table. `epsilon = 0` is the greedy oracle.
pub struct OraclePolicy<R> {
    q: Arc<QTable>,
    epsilon: f64,
    rng: R,
}

impl<R: Rng> OraclePolicy<R> {
    pub fn new(q: Arc<QTable>, epsilon: f64, rng: R) -> Self {
        Self { q, epsilon, rng }
    }
}

impl<R: Rng> Policy for OraclePolicy<R> {
    fn act(&mut self, obs: &Observation) -> Action {
        epsilon_greedy(&self.q, obs, self.epsilon, &mut self.rng)
    }
}
