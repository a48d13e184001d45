//! Finite-difference checks of every layer and of the full model.

use super::{grad_check, GradReport};
use linkrl::agents::{AgentConfig, AgentKind, ObservationEncoder};
use linkrl::dt::{DtConfig, DtModel, StepInput, Tokenized, TOKENS_PER_STEP};
use linkrl::env::{Action, EnvConfig, Observation};
use linkrl::nn::layers::{Activation, Block, Embedding, LayerNorm, Linear, Mlp, SelfAttention};
use linkrl::nn::posenc::{PosEncodingKind, PositionalEncoding};
use linkrl::nn::{Graph, NodeId, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Scalar readout that mixes every element with a fixed random weight.
fn readout(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
    let cols = g.value(out).cols;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(random(cols, 1, &mut r));
    let proj = g.matmul(out, w).unwrap();
    let sq = g.square(proj);
    g.sum(sq)
}

struct Fixture<L> {
    ps: ParamStore,
    layer: L,
    x: ParamId,
}

fn fixture<L>(rows: usize, cols: usize, make: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> L) -> Fixture<L> {
    let mut r = rng();
    let mut ps = ParamStore::new();
    let x = ps.add("input", random(rows, cols, &mut r), false);
    let layer = make(&mut ps, &mut r);
    Fixture { ps, layer, x }
}

pub fn check_linear() -> GradReport {
    let mut f = fixture(3, 4, |ps, r| Linear::new(ps, "lin", 4, 5, r));
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = f.layer.forward(g, &f.ps, x).unwrap();
        readout(g, y, 1)
    })
}

pub fn check_layer_norm() -> GradReport {
    let mut f = fixture(3, 6, |ps, r| {
        let ln = LayerNorm::new(ps, "ln", 6);
        for p in ps.iter_mut().skip(1) {
            p.value = random(1, 6, r);
        }
        ln
    });
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = f.layer.forward(g, &f.ps, x).unwrap();
        readout(g, y, 2)
    })
}

pub fn check_embedding() -> GradReport {
    let mut f = fixture(1, 1, |ps, r| Embedding::new(ps, "emb", 5, 4, 0.5, r));
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let y = f.layer.forward(g, &f.ps, vec![0, 3, 3, 1]).unwrap();
        readout(g, y, 3)
    })
}

pub fn check_mlp(act: Activation) -> GradReport {
    let mut f = fixture(4, 3, |ps, r| Mlp::new(ps, "mlp", &[3, 8, 8, 2], act, r));
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = f.layer.forward(g, &f.ps, x).unwrap();
        readout(g, y, 4)
    })
}

fn staggered_mask(batch: usize, seq: usize) -> Vec<bool> {
    (0..batch * seq * seq)
        .map(|i| {
            let (b, q, k) = (i / (seq * seq), (i / seq) % seq, i % seq);
            k <= q && (k + b) % 3 != 1 || k == q
        })
        .collect()
}

pub fn check_attention_op() -> GradReport {
    let (batch, seq, d) = (2, 4, 6);
    let mask = staggered_mask(batch, seq);
    let mut f = fixture(batch * seq, 3 * d, |_, _| ());
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = g.attention(x, &mask, batch, seq, 2).unwrap();
        readout(g, y, 5)
    })
}

pub fn check_self_attention() -> GradReport {
    let (batch, seq, d) = (2, 3, 4);
    let mask = staggered_mask(batch, seq);
    let mut f = fixture(batch * seq, d, |ps, r| SelfAttention::new(ps, "attn", d, 2, 0.5, r));
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = f.layer.forward(g, &f.ps, x, &mask, batch, seq).unwrap();
        readout(g, y, 6)
    })
}

pub fn check_block() -> GradReport {
    let (batch, seq, d) = (1, 3, 4);
    let mask = staggered_mask(batch, seq);
    let mut f = fixture(batch * seq, d, |ps, r| {
        let b = Block::new(ps, "block", d, 2, Activation::Gelu, r);
        for p in ps.iter_mut().skip(1) {
            p.value = random(p.value.rows, p.value.cols, r);
        }
        b
    });
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let y = f.layer.forward(g, &f.ps, x, &mask, batch, seq).unwrap();
        readout(g, y, 7)
    })
}

pub fn check_posenc(kind: PosEncodingKind) -> GradReport {
    let mut f = fixture(1, 1, |ps, r| PositionalEncoding::new(ps, kind, 4, 6, 10_000.0, r));
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let y = f.layer.forward(g, &f.ps, &[0, 1, 3], &[0.0, 35.0, 180.0]).unwrap();
        let x = g.param(&f.ps, f.x);
        let s = g.sum(x);
        let y = readout(g, y, 8);
        g.add(y, s).unwrap()
    })
}

pub fn check_losses() -> GradReport {
    let mut f = fixture(4, 5, |_, _| ());
    grad_check(&mut f, |f| &mut f.ps, |f, g| {
        let x = g.param(&f.ps, f.x);
        let ce = g.cross_entropy(x, vec![0, 4, 2, 2], vec![1.0, 0.5, 0.0, 2.0]).unwrap();
        let lse = g.logsumexp_rows(x);
        let qa = g.gather_cols(x, vec![1, 1, 0, 3]).unwrap();
        let gap = g.sub(lse, qa).unwrap();
        let pen = g.mean(gap);
        let rows = g.gather_rows(x, vec![3, 0]).unwrap();
        let r = readout(g, rows, 9);
        let s = g.add(ce, pen).unwrap();
        let s = g.add(s, r).unwrap();
        g.scale(s, 0.7)
    })
}

pub fn check_agent_net() -> GradReport {
    let env = EnvConfig { context_max: 20, n_actions: 4, n_cqi: 3, ..EnvConfig::default() };
    let cfg = AgentConfig { hidden_width: 6, ..AgentConfig::default() };
    let mut agent = linkrl::agents::ValueAgent::new(AgentKind::Bcq, &env, &cfg).unwrap();
    let enc = ObservationEncoder::new(&env);
    let obs: Vec<Observation> = (0..4).map(|i| Observation { k: i % 2, x: 3 + 4 * i as u32, cqi: i % 3, t: 0, packet_id: 0 }).collect();
    grad_check(&mut agent, |a| &mut a.params, |a, g| {
        let x = g.input(enc.batch(obs.iter()));
        let out = a.net.forward(g, &a.params, x).unwrap();
        let q = out.q.unwrap();
        let qa = g.gather_cols(q, vec![0, 1, 2, 3]).unwrap();
        let y = g.input(Tensor::new(4, 1, vec![0.1, -0.3, 0.2, 0.5]));
        let d = g.sub(qa, y).unwrap();
        let sq = g.square(d);
        let td = g.mean(sq);
        let ce = g.cross_entropy(out.logits.unwrap(), vec![1, 1, 3, 0], vec![1.0; 4]).unwrap();
        g.add(td, ce).unwrap()
    })
}

/// The full decision-transformer loss at toy width.
pub fn check_dt(kind: PosEncodingKind) -> GradReport {
    let env = EnvConfig { context_max: 20, n_actions: 4, n_cqi: 3, n_states: 2, ..EnvConfig::default() };
    let cfg = DtConfig { n_layers: 2, n_heads: 2, d_model: 4, context: Some(3), pos_encoding: kind, ..DtConfig::default() };
    let mut model = DtModel::new(&env, &cfg).unwrap();
    let mut r = rng();
    for p in model.params.iter_mut() {
        p.value = random(p.value.rows, p.value.cols, &mut r);
    }
    let item = |pid: u64, k: usize, x: u32, t_a: u64, t_r: u64, a: u16| StepInput {
        obs: Observation { k, x, cqi: (x as usize * 3) / 20, t: t_a, packet_id: pid },
        action: Some(Action(a)),
        omega: 0.3 * pid as f64 - 0.5,
        packet_id: pid,
        t_a,
        t_r,
    };
    let w1 = [item(0, 0, 5, 0, 7, 2), item(1, 0, 12, 4, 11, 4), item(0, 1, 17, 8, 15, 1)];
    let w2 = [item(3, 0, 9, 20, 21, 3), item(3, 1, 2, 21, 22, 1)];
    let seq = model.capacity * TOKENS_PER_STEP;
    grad_check(
        &mut model,
        |m| &mut m.params,
        |m, g| {
            let t1 = m.tokenize(&w1.iter().collect::<Vec<_>>());
            let t2 = m.tokenize(&w2.iter().collect::<Vec<_>>());
            let rows = vec![Tokenized::state_row(0), Tokenized::state_row(1), Tokenized::state_row(2), seq + Tokenized::state_row(1), seq + Tokenized::state_row(2)];
            let logits = m.forward(g, &[t1, t2], rows).unwrap();
            g.cross_entropy(logits, vec![0, 3, 1, 2, 2], vec![1.0; 5]).unwrap()
        },
    )
}

pub fn all() -> Vec<(&'static str, GradReport)> {
    vec![
        ("linear", check_linear()),
        ("layer_norm", check_layer_norm()),
        ("embedding", check_embedding()),
        ("mlp_relu", check_mlp(Activation::Relu)),
        ("mlp_gelu", check_mlp(Activation::Gelu)),
        ("attention_op", check_attention_op()),
        ("self_attention", check_self_attention()),
        ("block", check_block()),
        ("posenc_be", check_posenc(PosEncodingKind::Be)),
        ("posenc_lt", check_posenc(PosEncodingKind::Lt)),
        ("losses", check_losses()),
        ("agent_net", check_agent_net()),
        ("dt_be", check_dt(PosEncodingKind::Be)),
        ("dt_lt", check_dt(PosEncodingKind::Lt)),
        ("dt_ct", check_dt(PosEncodingKind::Ct)),
    ]
}

