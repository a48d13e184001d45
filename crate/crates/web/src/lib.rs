//! Three small views of the environment for the browser page in `www/`.

use linkrl::dataset::{attention_mask as step_mask, Step};
use linkrl::env::{run_scheduler, Action, EnvConfig, Observation};
use linkrl::olla::OllaPolicy;
use linkrl::oracle::{greedy_action, value_iteration};
use linkrl::policy::FnPolicy;
use wasm_bindgen::prelude::*;

fn js_err(e: linkrl::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// DP-optimal MCS for every context at retransmission index `k`.
pub fn greedy_mcs_table(k: usize, beta: f64, gamma: f64) -> linkrl::Result<Vec<u16>> {
    let env = EnvConfig { beta, ..EnvConfig::default() };
    if k >= env.n_states {
        return Err(linkrl::Error::Config(format!("retransmission index {k} must be below {}", env.n_states)));
    }
    let q = value_iteration(&env, gamma, 1e-8)?;
    Ok((0..env.context_max).map(|x| greedy_action(&q, &Observation { k, x, cqi: 0, t: 0, packet_id: 0 }).0).collect())
}

#[wasm_bindgen]
pub fn greedy_mcs(k: usize, beta: f64, gamma: f64) -> Result<Vec<u16>, JsError> {
    greedy_mcs_table(k, beta, gamma).map_err(js_err)
}

/// Row-major `steps x steps` mask (1 = query row may read key column) over
/// the last `steps` transmissions of a scheduler run, followed by each
/// step's packet id.
pub fn feedback_mask_flat(harq_delay: u64, processes: usize, steps: usize) -> linkrl::Result<Vec<u32>> {
    let env = EnvConfig { harq_delay, n_harq_processes: processes, rng_seed: 7, ..EnvConfig::default() };
    let ttis = (steps as u64 + 4) * (harq_delay + 1);
    let trace = run_scheduler(&env, &mut FnPolicy(|_: &Observation| Action(20)), ttis)?;
    let tail = &trace[trace.len().saturating_sub(steps)..];
    let s: Vec<Step> = tail
        .iter()
        .enumerate()
        .map(|(i, t)| Step { source: Some(i), omega: 0.0, packet_id: t.packet_id, t_a: t.t_a, t_r: t.t_r, delta_t: 0 })
        .collect();
    let mask = step_mask(&s);
    let mut out: Vec<u32> = mask.as_slice().iter().map(|&b| b as u32).collect();
    out.extend(tail.iter().map(|t| t.packet_id as u32));
    Ok(out)
}

#[wasm_bindgen]
pub fn feedback_mask(harq_delay: u32, processes: usize, steps: usize) -> Result<Vec<u32>, JsError> {
    feedback_mask_flat(harq_delay as u64, processes, steps).map_err(js_err)
}

/// BLER over consecutive windows of an OLLA run, then the final offset.
pub fn olla_bler_trace(target: f64, step_up: f64, ttis: u64, window: usize, seed: u64) -> linkrl::Result<Vec<f64>> {
    let env = EnvConfig { rng_seed: seed, ..EnvConfig::default() };
    let mut policy = OllaPolicy::new(&env, target, step_up)?;
    let trace = run_scheduler(&env, &mut policy, ttis)?;
    let mut out: Vec<f64> = trace
        .chunks(window.max(1))
        .map(|c| c.iter().filter(|t| !t.success()).count() as f64 / c.len() as f64)
        .collect();
    out.push(policy.state.offset);
    Ok(out)
}

#[wasm_bindgen]
pub fn olla_bler(target: f64, step_up: f64, ttis: u32, window: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    olla_bler_trace(target, step_up, ttis as u64, window, seed as u64).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_mcs_rises_with_context() {
        let t = greedy_mcs_table(0, 0.5, 0.9).unwrap();
        assert_eq!(t.len(), 500);
        assert!(t[499] > t[10]);
        assert!(greedy_mcs_table(9, 0.5, 0.9).is_err());
    }

    #[test]
    fn mask_layout() {
        let m = feedback_mask_flat(7, 2, 12).unwrap();
        assert_eq!(m.len(), 12 * 12 + 12);
        for q in 0..12 {
            assert_eq!(m[q * 12 + q], 1);
            for k in q + 1..12 {
                assert_eq!(m[q * 12 + k], 0);
            }
        }
        assert!(m[..144].iter().filter(|&&b| b == 0).count() > 66);
    }

    #[test]
    fn olla_trace_settles_near_target() {
        let t = olla_bler_trace(0.3, 5.0, 20_000, 1000, 1).unwrap();
        assert_eq!(t.len(), 21);
        let tail = &t[10..20];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((mean - 0.3).abs() < 0.05, "{mean}");
    }
}
