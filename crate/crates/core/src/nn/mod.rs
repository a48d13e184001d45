//! Minimal dense tensors with reverse-mode autodiff and the layers the
//! agents are built from.

pub mod checkpoint;
mod graph;
pub mod layers;
pub mod optim;
pub mod posenc;
mod tensor;

pub use graph::{Grads, Graph, NodeId, Param, ParamId, ParamStore, LN_EPS};
pub use layers::{Activation, Block, Embedding, LayerNorm, Linear, Mlp, SelfAttention};
pub use optim::{AdamW, AdamWConfig};
pub use posenc::{sinusoidal, PosEncodingKind, PositionalEncoding};
pub use tensor::Tensor;
