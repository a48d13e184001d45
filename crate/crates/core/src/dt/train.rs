use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::{select_window, ConditioningKind, ConditioningSpec, DtConfig, DtModel, StepInput, Tokenized, TOKENS_PER_STEP};
use crate::dataset::{rtg_davg, rtg_vanilla, Transition};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `n` losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let t = &self.losses[self.losses.len().saturating_sub(n)..];
        t.iter().sum::<f64>() / t.len().max(1) as f64
    }
}

/// Conditioning value of every transmission of one seed's stream, computed
/// from the full logged trajectory.
pub fn step_omegas(stream: &[Transition], spec: &ConditioningSpec) -> Result<Vec<f64>> {
    let gamma = spec.gamma();
    match spec.kind {
        ConditioningKind::Vanilla | ConditioningKind::Cctr => {
            let mut by_packet: HashMap<u64, Vec<usize>> = HashMap::new();
            for (i, t) in stream.iter().enumerate() {
                by_packet.entry(t.packet_id).or_default().push(i);
            }
            let mut out = vec![0.0; stream.len()];
            for idx in by_packet.values() {
                let rewards: Vec<f64> = idx.iter().map(|&i| stream[i].reward).collect();
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = rtg_vanilla(&rewards, k, gamma)?;
                }
            }
            Ok(out)
        }
        ConditioningKind::Davg => {
            let rewards: Vec<f64> = stream.iter().map(|t| t.reward).collect();
            (0..stream.len()).map(|n| rtg_davg(&rewards, n, gamma, spec.window)).collect()
        }
    }
}

/// Splits a concatenated dataset into per-seed streams.
pub(crate) fn split_streams(data: &[Transition]) -> Vec<&[Transition]> {
    data.chunk_by(|a, b| a.seed_id == b.seed_id).collect()
}

fn stream_items(stream: &[Transition], spec: &ConditioningSpec) -> Result<Vec<StepInput>> {
    let omegas = step_omegas(stream, spec)?;
    Ok(stream
        .iter()
        .zip(omegas)
        .map(|(t, omega)| StepInput {
            obs: t.obs,
            action: Some(t.action),
            omega,
            packet_id: t.packet_id,
            t_a: t.t_a,
            t_r: t.t_r,
        })
        .collect())
}

/// Trains a fresh model by maximising the likelihood of logged actions at
/// every real state token of windows sampled uniformly by their last step.
pub fn train(data: &[Transition], env: &EnvConfig, config: &DtConfig) -> Result<(DtModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("dt training set".into()));
    }
    let mut model = DtModel::new(env, config)?;
    let streams = split_streams(data).into_iter().map(|s| stream_items(s, &config.conditioning)).collect::<Result<Vec<_>>>()?;
    let index: Vec<(usize, usize)> = streams.iter().enumerate().flat_map(|(s, v)| (0..v.len()).map(move |i| (s, i))).collect();
    let mut opt = AdamW::new(
        &model.params,
        AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, max_grad_norm: config.grad_clip, ..AdamWConfig::default() },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xd7));
    let seq = model.capacity * TOKENS_PER_STEP;
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        let (mut rows, mut targets) = (Vec::new(), Vec::new());
        for b in 0..config.batch_size {
            let (s, i) = index[rng.gen_range(0..index.len())];
            let window = select_window(&streams[s][..=i], config, model.capacity);
            let pad = model.capacity - window.len();
            for (j, it) in window.iter().enumerate() {
                rows.push(b * seq + Tokenized::state_row(pad + j));
                targets.push(it.action.expect("logged").index());
            }
            batch.push(model.tokenize(&window));
        }
        let mut g = Graph::new();
        let logits = model.forward(&mut g, &batch, rows)?;
        let n = targets.len();
        let loss = g.cross_entropy(logits, targets, vec![1.0; n])?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("dt training loss".into()));
        }
        losses.push(value);
        model.params.zero_grad();
        g.backward(loss, &mut model.params)?;
        opt.step(&mut model.params)?;
    }
    Ok((model, TrainReport { losses }))
}
