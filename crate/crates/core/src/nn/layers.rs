use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(rows, cols, data)
}

/// Standard deviation `std` as a symmetric uniform limit.
pub fn uniform_limit_for_std(std: f64) -> f64 {
    std * 3f64.sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (fan_in as f64).sqrt();
        let w = ps.add(format!("{name}.w"), uniform(rng, fan_in, fan_out, limit), true);
        let b = ps.add(format!("{name}.b"), uniform(rng, 1, fan_out, limit), false);
        Self { w, b, fan_in, fan_out }
    }

    /// Weights with the given uniform limit and zero bias.
    pub fn with_limit<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        limit: f64,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), uniform(rng, fan_in, fan_out, limit), true);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(1, fan_out), false);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::from_fn(1, dim, |_, _| 1.0), false);
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(1, dim), false);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub size: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, size: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let table = ps.add(format!("{name}.table"), uniform(rng, size, dim, uniform_limit_for_std(std)), false);
        Self { table, size }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, idx: Vec<usize>) -> Result<NodeId> {
        let t = g.param(ps, self.table);
        g.gather_rows(t, idx)
    }
}

/// Fully connected network with the activation between layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists every layer size including input and output.
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, mut x: NodeId) -> Result<NodeId> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, ps, x)?;
            if i < last {
                x = self.activation.apply(g, x);
            }
        }
        Ok(x)
    }
}

/// Multi-head self-attention with an arbitrary boolean mask.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, d_model: usize, heads: usize, std: f64, rng: &mut R) -> Self {
        let limit = uniform_limit_for_std(std);
        Self {
            qkv: Linear::with_limit(ps, &format!("{name}.qkv"), d_model, 3 * d_model, limit, rng),
            proj: Linear::with_limit(ps, &format!("{name}.proj"), d_model, d_model, limit, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId, mask: &[bool], batch: usize, seq: usize) -> Result<NodeId> {
        let qkv = self.qkv.forward(g, ps, x)?;
        let a = g.attention(qkv, mask, batch, seq, self.heads)?;
        self.proj.forward(g, ps, a)
    }
}

/// Pre-normalisation transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub fc: Linear,
    pub out: Linear,
    pub activation: Activation,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = uniform_limit_for_std(0.02);
        Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d_model),
            attn: SelfAttention::new(ps, &format!("{name}.attn"), d_model, heads, 0.02, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d_model),
            fc: Linear::with_limit(ps, &format!("{name}.fc"), d_model, 4 * d_model, limit, rng),
            out: Linear::with_limit(ps, &format!("{name}.out"), 4 * d_model, d_model, limit, rng),
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId, mask: &[bool], batch: usize, seq: usize) -> Result<NodeId> {
        let h = self.ln1.forward(g, ps, x)?;
        let h = self.attn.forward(g, ps, h, mask, batch, seq)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, ps, x)?;
        let h = self.fc.forward(g, ps, h)?;
        let h = self.activation.apply(g, h);
        let h = self.out.forward(g, ps, h)?;
        g.add(x, h)
    }
}
