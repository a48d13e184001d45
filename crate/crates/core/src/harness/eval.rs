use std::fmt::Write as _;

use crate::dataset::Transition;
use crate::env::{run_scheduler, EnvConfig};
use crate::error::Result;
use crate::policy::Policy;

/// Summary of a policy's rollouts over several evaluation seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Undiscounted total reward of each seed's rollout.
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of `returns`; zero for a single seed.
    pub std: f64,
    pub success_rate: f64,
    pub bler_analog: f64,
    pub attempts_per_packet: f64,
    pub reward_per_tti: f64,
    pub horizon: u64,
}

impl EvalReport {
    pub fn from_traces(name: &str, seeds: &[u64], traces: &[Vec<Transition>], horizon: u64) -> Self {
        let returns: Vec<f64> = traces.iter().map(|t| t.iter().map(|x| x.reward).sum()).collect();
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = if returns.len() > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let tx: usize = traces.iter().map(Vec::len).sum();
        let acks = traces.iter().flatten().filter(|t| t.success()).count();
        let packets = traces.iter().flatten().filter(|t| t.attempt_index == 0).count();
        let success_rate = if tx == 0 { 0.0 } else { acks as f64 / tx as f64 };
        Self {
            name: name.to_string(),
            seeds: seeds.to_vec(),
            mean,
            std,
            success_rate,
            bler_analog: 1.0 - success_rate,
            attempts_per_packet: if packets == 0 { 0.0 } else { tx as f64 / packets as f64 },
            reward_per_tti: if horizon == 0 { 0.0 } else { mean / horizon as f64 },
            returns,
            horizon,
        }
    }

    /// `std / |mean|`.
    pub fn relative_std(&self) -> f64 {
        if self.mean == 0.0 { 0.0 } else { self.std / self.mean.abs() }
    }

    /// Two standard errors of the mean.
    pub fn two_se(&self) -> f64 {
        2.0 * self.std / (self.returns.len().max(1) as f64).sqrt()
    }
}

/// Rolls out a fresh policy from `make` on every seed. Seeds run in
/// parallel when the `parallel` feature is on; results keep seed order.
pub fn rollouts<F>(env: &EnvConfig, seeds: &[u64], horizon: u64, make: F) -> Result<Vec<Vec<Transition>>>
where
    F: Fn(u64) -> Result<Box<dyn Policy + Send>> + Sync,
{
    let one = |&seed: &u64| -> Result<Vec<Transition>> {
        let mut p = make(seed)?;
        run_scheduler(&EnvConfig { rng_seed: seed, ..env.clone() }, &mut p, horizon)
    };
    #[cfg(feature = "parallel")]
    let out: Vec<Result<Vec<Transition>>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<Vec<Transition>>> = seeds.iter().map(one).collect();
    out.into_iter().collect()
}

pub fn evaluate<F>(name: &str, env: &EnvConfig, seeds: &[u64], horizon: u64, make: F) -> Result<EvalReport>
where
    F: Fn(u64) -> Result<Box<dyn Policy + Send>> + Sync,
{
    let traces = rollouts(env, seeds, horizon, make)?;
    Ok(EvalReport::from_traces(name, seeds, &traces, horizon))
}

pub const REPORT_HEADER: &str =
    "policy,return_mean,return_std,relative_std,reward_per_tti,success_rate,bler_analog,attempts_per_packet";

pub fn report_row(r: &EvalReport) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.name,
        r.mean,
        r.std,
        r.relative_std(),
        r.reward_per_tti,
        r.success_rate,
        r.bler_analog,
        r.attempts_per_packet
    )
}

/// A CSV document opening with the config hash.
pub fn csv_with_hash(hash: &str, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("# config_hash: {hash}\n{header}\n");
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::tr;

    #[test]
    fn statistics_by_hand() {
        let a = vec![tr(0, 0, -0.5, 0, 1, false), tr(0, 1, 0.5, 1, 1, true)];
        let b = vec![tr(0, 0, 0.25, 0, 1, true), tr(1, 0, 0.25, 1, 1, true)];
        let r = EvalReport::from_traces("x", &[1, 2], &[a, b], 2);
        assert_eq!(r.returns, vec![0.0, 0.5]);
        assert_eq!(r.mean, 0.25);
        assert!((r.std - (0.125f64).sqrt()).abs() < 1e-15);
        assert_eq!(r.success_rate, 0.75);
        assert_eq!(r.bler_analog, 0.25);
        assert_eq!(r.attempts_per_packet, 4.0 / 3.0);
        assert_eq!(r.reward_per_tti, 0.125);
    }

    #[test]
    fn empty_traces() {
        let r = EvalReport::from_traces("x", &[0], &[vec![]], 0);
        assert_eq!((r.mean, r.std, r.bler_analog), (0.0, 0.0, 1.0));
    }
}
