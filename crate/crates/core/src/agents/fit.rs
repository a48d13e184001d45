//! Minibatch losses and the offline training loop shared by BC, BCQ and CQL.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bcq_action_filter, AgentKind, Bootstrap, ValueAgent};
use crate::dataset::Transition;
use crate::env::{EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph, NodeId, Tensor};

/// Bootstrapped value of each transition's next observation under the
/// target network, or `None` where the target is the bare reward.
pub(crate) fn next_values(
    online: &ValueAgent,
    target: &ValueAgent,
    batch: &[&Transition],
    bootstrap: Bootstrap,
) -> Result<Vec<Option<f64>>> {
    let next: Vec<Observation> = batch.iter().map(|t| t.next_obs).collect();
    let (tq, _) = target.outputs(&next)?;
    let tq = tq.expect("value agents have a Q head");
    let allowed: Option<Vec<Vec<usize>>> = if online.kind == AgentKind::Bcq {
        let (q, p) = online.outputs(&next)?;
        let (q, p) = (q.expect("bcq has a Q head"), p.expect("bcq has a behaviour head"));
        Some(
            (0..next.len())
                .map(|r| {
                    let set = bcq_action_filter(p.row(r), online.config.bcq_tau);
                    let best = set.iter().copied().fold(set[0], |b, a| if q.get(r, a) > q.get(r, b) { a } else { b });
                    vec![best]
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(r, t)| {
            if t.packet_terminal && bootstrap == Bootstrap::Episodic {
                return None;
            }
            Some(match &allowed {
                Some(a) => tq.get(r, a[r][0]),
                None => tq.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect())
}

/// Builds the training loss of `agent.kind` for one minibatch.
pub(crate) fn batch_loss(
    g: &mut Graph,
    agent: &ValueAgent,
    batch: &[&Transition],
    targets: Option<&[f64]>,
    cql_alpha: f64,
) -> Result<NodeId> {
    let x = g.input(agent.encoder.batch(batch.iter().map(|t| &t.obs)));
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    let out = agent.net.forward(g, &agent.params, x)?;
    let mut loss: Option<NodeId> = None;
    let mut add = |g: &mut Graph, term: NodeId| -> Result<()> {
        loss = Some(match loss {
            Some(l) => g.add(l, term)?,
            None => term,
        });
        Ok(())
    };
    if let (Some(q), Some(y)) = (out.q, targets) {
        let qa = g.gather_cols(q, actions.clone())?;
        let y = g.input(Tensor::new(y.len(), 1, y.to_vec()));
        let diff = g.sub(qa, y)?;
        let sq = g.square(diff);
        let td = g.mean(sq);
        add(g, td)?;
        if agent.kind == AgentKind::Cql && cql_alpha > 0.0 {
            let lse = g.logsumexp_rows(q);
            let gap = g.sub(lse, qa)?;
            let m = g.mean(gap);
            let pen = g.scale(m, cql_alpha);
            add(g, pen)?;
        }
    }
    if let Some(logits) = out.logits {
        let ce = g.cross_entropy(logits, actions, vec![1.0; batch.len()])?;
        let w = if agent.kind == AgentKind::Bcq { agent.config.bcq_beta } else { 1.0 };
        let ce = g.scale(ce, w);
        add(g, ce)?;
    }
    Ok(loss.expect("every agent has a loss term"))
}

/// One gradient step; returns the loss value.
pub(crate) fn apply_step(
    agent: &mut ValueAgent,
    target: Option<&ValueAgent>,
    opt: &mut AdamW,
    batch: &[&Transition],
) -> Result<f64> {
    let ys = match target {
        Some(tgt) => {
            let nv = next_values(agent, tgt, batch, agent.config.bootstrap)?;
            let gamma = agent.config.gamma;
            Some(batch.iter().zip(nv).map(|(t, v)| super::td_target(t.reward, gamma, v.unwrap_or(0.0), v.is_none())).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut g = Graph::new();
    let loss = batch_loss(&mut g, agent, batch, ys.as_deref(), agent.config.cql_alpha)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{} training loss", agent.kind.name())));
    }
    agent.params.zero_grad();
    g.backward(loss, &mut agent.params)?;
    opt.step(&mut agent.params)?;
    Ok(value)
}

pub(crate) fn optimizer(agent: &ValueAgent) -> AdamW {
    AdamW::new(&agent.params, AdamWConfig { lr: agent.config.lr_for(agent.kind), ..AdamWConfig::default() })
}

/// Trains `kind` on a fixed dataset by uniform minibatch sampling.
pub(crate) fn train_offline(
    kind: AgentKind,
    data: &[Transition],
    env: &EnvConfig,
    config: &super::AgentConfig,
) -> Result<ValueAgent> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} training set", kind.name())));
    }
    let mut agent = ValueAgent::new(kind, env, config)?;
    let mut target = kind.has_q_head().then(|| agent.clone());
    let mut opt = optimizer(&agent);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let every = config.target_update_for(kind);
    for step in 0..config.steps {
        let batch: Vec<&Transition> = (0..config.batch_size).map(|_| &data[rng.gen_range(0..data.len())]).collect();
        apply_step(&mut agent, target.as_ref(), &mut opt, &batch)?;
        if let Some(t) = target.as_mut() {
            if (step + 1) % every == 0 {
                t.params.copy_values_from(&agent.params);
            }
        }
    }
    Ok(agent)
}
