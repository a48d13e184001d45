//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use linkrl::env::EnvConfig;
use linkrl::nn::{Graph, NodeId, ParamId, ParamStore};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Below this magnitude (times the loss scale) gradients are compared
/// absolutely: central differences at `FD_STEP` carry roughly
/// `1e-11 * |loss|` of rounding noise.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares backprop gradients of the scalar built by `build` with central
/// finite differences over every parameter scalar.
pub fn grad_check<M>(
    m: &mut M,
    params: impl Fn(&mut M) -> &mut ParamStore,
    build: impl Fn(&M, &mut Graph) -> NodeId,
) -> GradReport {
    let analytic: Vec<Vec<f64>> = {
        params(m).zero_grad();
        let mut g = Graph::new();
        let loss = build(m, &mut g);
        g.backward(loss, params(m)).unwrap();
        params(m).iter().map(|p| p.grad.clone()).collect()
    };
    let eval = |m: &M| {
        let mut g = Graph::new();
        let l = build(m, &mut g);
        g.value(l).item()
    };
    let floor = FD_FLOOR * eval(m).abs().max(1.0);
    let mut report = GradReport { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let n = params(m).len();
    for i in 0..n {
        let len = params(m).get(ParamId(i)).value.len();
        for j in 0..len {
            let orig = params(m).get(ParamId(i)).value.data[j];
            params(m).get_mut(ParamId(i)).value.data[j] = orig + FD_STEP;
            let up = eval(m);
            params(m).get_mut(ParamId(i)).value.data[j] = orig - FD_STEP;
            let down = eval(m);
            params(m).get_mut(ParamId(i)).value.data[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{}[{j}] analytic {a:e} numeric {numeric:e}", params(m).get(ParamId(i)).name);
            }
        }
    }
    report
}

/// Q-values by iterating the Bellman operator on the explicit
/// `(k, x) -> (k', x')` kernel until the sup-norm change drops below `tol`.
pub fn brute_force_q(env: &EnvConfig, gamma: f64, tol: f64) -> Vec<f64> {
    let (n, c, na) = (env.n_states, env.context_max as usize, env.n_actions);
    let mut q = vec![0.0; n * c * na];
    let idx = |k: usize, x: usize, a: usize| (k * c + x) * na + a;
    loop {
        let mut next = vec![0.0; q.len()];
        for k in 0..n {
            for x in 0..c {
                for a in 0..na {
                    let p = ((x as f64) / (18.0 * (a + 1) as f64)).tanh().max(env.success_floor);
                    let rs = ((a + 1) as f64 / 28.0).tanh();
                    let rf = -env.beta * (k as f64 + 1.0);
                    let k_fail = if k + 1 < n { k + 1 } else { 0 };
                    let mut total = 0.0;
                    for x2 in 0..c {
                        let best = |k2: usize| (0..na).map(|a2| q[idx(k2, x2, a2)]).fold(f64::NEG_INFINITY, f64::max);
                        let succ = rs + gamma * best(0);
                        let fail = rf + gamma * best(k_fail);
                        total += (p * succ + (1.0 - p) * fail) / c as f64;
                    }
                    next[idx(k, x, a)] = total;
                }
            }
        }
        let diff = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if diff < tol {
            return q;
        }
    }
}
