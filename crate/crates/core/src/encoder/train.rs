use super::{Activation, EncoderArch, EncoderParams, Representation};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, FrozenArtifacts, Graph};
use crate::numeric::{check_divergence, Matrix, Optimizer, OptimizerConfig, Rng};
use crate::tasks::{corrupt_features, mask_rows, LossEvaluator, TaskId};

/// Default layer counts per task; hidden width equals the embedding width.
pub fn default_arch(task: TaskId, embed_dim: usize) -> EncoderArch {
    let (gcn, lin) = match task {
        TaskId::GraphComp => (0, 3),
        TaskId::Gae => (2, 0),
        TaskId::SubgCon => (1, 0),
        _ => (1, 1),
    };
    let mut arch = EncoderArch::new(gcn, lin, embed_dim);
    if task == TaskId::Dgi {
        arch.hidden_activation = Activation::Prelu;
    }
    arch
}

/// Default optimizer per task. DGI stops early after 20 epochs without
/// improvement of the training loss, capped at 1000 epochs.
pub fn default_opts(task: TaskId, dataset: &str) -> OptimizerConfig {
    match task {
        TaskId::GraphComp => match dataset.to_ascii_lowercase().as_str() {
            "citeseer" => OptimizerConfig::adam(5e-4, 0.7, 500),
            "pubmed" => OptimizerConfig::adam(5e-4, 0.5, 500),
            _ => OptimizerConfig::adam(0.008, 8e-5, 500),
        },
        TaskId::Gae => OptimizerConfig::adam(0.01, 0.0, 500),
        TaskId::Dgi => OptimizerConfig::adam(0.001, 0.0, 1000).with_patience(20),
        TaskId::SubgCon => OptimizerConfig::adam(0.001, 0.0, 50),
        _ => OptimizerConfig::adam(0.001, 5e-4, 200),
    }
}

/// Normalized visible adjacency, encoder input, and (when a contrastive
/// task needs it) the input built from row-shuffled features.
///
/// Features of masked nodes are zeroed whenever feature completion is among
/// the tasks. Encoders without graph convolutions receive `Â·X` so that
/// they still see neighborhood context.
pub struct EncoderInput {
    pub a_hat: Matrix,
    pub x: Matrix,
    pub x_neg: Option<Matrix>,
}

pub fn encoder_input(
    tasks: &[TaskId],
    g: &Graph,
    art: &FrozenArtifacts,
    arch: &EncoderArch,
) -> Result<EncoderInput> {
    let a_hat = normalize_adjacency(&art.visible_graph(g));
    let raw = if tasks.contains(&TaskId::GraphComp) {
        mask_rows(g.features(), &art.feature_mask)
    } else {
        g.features().clone()
    };
    let prepare = |m: Matrix| -> Result<Matrix> {
        if arch.gcn_layers == 0 {
            a_hat.matmul(&m)
        } else {
            Ok(m)
        }
    };
    let x_neg = if tasks.contains(&TaskId::Dgi) {
        Some(prepare(corrupt_features(&raw, &art.corruption_perm)?)?)
    } else {
        None
    };
    let x = prepare(raw)?;
    Ok(EncoderInput { a_hat, x, x_neg })
}

pub struct JointOutcome {
    pub params: EncoderParams,
    pub heads: Vec<Vec<Matrix>>,
    /// Task weights (softmax of the learned logits; `[1.0]` for one task).
    pub alpha: Vec<f64>,
    /// Weighted training objective per epoch.
    pub curve: Vec<f64>,
    pub embedding: Matrix,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Trains one shared encoder on `Σ α_i · l_i` with a private head per task.
/// With `learn_weights` the weights are a softmax over learnable logits;
/// otherwise they stay uniform.
pub fn train_joint(
    evals: &[&LossEvaluator],
    g: &Graph,
    art: &FrozenArtifacts,
    arch: &EncoderArch,
    opts: &OptimizerConfig,
    learn_weights: bool,
    rng: &Rng,
) -> Result<JointOutcome> {
    opts.validate()?;
    if evals.is_empty() {
        return Err(Error::Parameter("no tasks to train".into()));
    }
    let ids: Vec<TaskId> = evals.iter().map(|e| e.id()).collect();
    let input = encoder_input(&ids, g, art, arch)?;
    let k = evals.len();
    let d = arch.embed_dim;

    let mut enc = EncoderParams::init(arch, input.x.cols(), &mut rng.split(0))?;
    let enc_frozen = enc.frozen_mask();
    let mut extra: Vec<Matrix> = Vec::new();
    let mut head_slots = Vec::with_capacity(k);
    for (i, ev) in evals.iter().enumerate() {
        let head = ev.init_head(d, &mut rng.split(1 + i as u64));
        head_slots.push(extra.len()..extra.len() + head.len());
        extra.extend(head);
    }
    let logit_slot = extra.len();
    extra.push(Matrix::zeros(1, k));
    let mut extra_frozen = vec![false; extra.len()];
    extra_frozen[logit_slot] = !(learn_weights && k > 1);

    let mut enc_opt = Optimizer::new(opts, &enc.params);
    let mut extra_opt = Optimizer::new(opts, &extra);
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, EncoderParams, Vec<Matrix>)> = None;
    let mut since_best = 0;

    for epoch in 1..=opts.epochs {
        let (h, cache) = enc.forward(&input.a_hat, &input.x)?;
        let neg = match &input.x_neg {
            Some(xn) => Some(enc.forward(&input.a_hat, xn)?),
            None => None,
        };
        let alpha = softmax(extra[logit_slot].data());
        let mut total = 0.0;
        let mut objectives = Vec::with_capacity(k);
        let mut d_h = Matrix::zeros(h.rows(), h.cols());
        let mut d_hn = Matrix::zeros(h.rows(), h.cols());
        let mut extra_grads: Vec<Matrix> = extra
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        for (i, ev) in evals.iter().enumerate() {
            let hn = match (ev.id(), &neg) {
                (TaskId::Dgi, Some((hn, _))) => Some(hn),
                _ => None,
            };
            let tg = ev.evaluate(&h, hn, &extra[head_slots[i].clone()], true)?;
            total += alpha[i] * tg.objective;
            objectives.push(tg.objective);
            d_h.axpy(alpha[i], &tg.d_h)?;
            if let Some(g) = &tg.d_h_neg {
                d_hn.axpy(alpha[i], g)?;
            }
            for (slot, g) in head_slots[i].clone().zip(tg.d_head) {
                extra_grads[slot] = g.scale(alpha[i]);
            }
        }
        check_divergence(total, epoch)?;
        curve.push(total);
        for (j, &obj) in objectives.iter().enumerate() {
            extra_grads[logit_slot][(0, j)] = alpha[j] * (obj - total);
        }

        if let Some(patience) = opts.patience {
            let improved = best.as_ref().is_none_or(|b| total < b.0);
            if improved {
                best = Some((total, enc.clone(), extra.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }

        let mut enc_grads = enc.backward(&input.a_hat, &cache, &d_h)?;
        if let Some((_, cache_n)) = &neg {
            let gn = enc.backward(&input.a_hat, cache_n, &d_hn)?;
            for (a, b) in enc_grads.iter_mut().zip(&gn) {
                a.add_assign(b)?;
            }
        }
        enc_opt.step(&mut enc.params, &enc_grads, &enc_frozen);
        extra_opt.step(&mut extra, &extra_grads, &extra_frozen);
    }

    if let Some((_, e, x)) = best {
        enc = e;
        extra = x;
    }
    let embedding = enc.encode(&input.a_hat, &input.x)?;
    if !embedding.is_finite() {
        return Err(Error::Divergence {
            epoch: curve.len(),
            loss: f64::NAN,
        });
    }
    let alpha = softmax(extra[logit_slot].data());
    let heads = head_slots
        .iter()
        .map(|r| extra[r.clone()].to_vec())
        .collect();
    Ok(JointOutcome {
        params: enc,
        heads,
        alpha,
        curve,
        embedding,
    })
}

/// A trained representation and its loss curve.
pub struct Trained {
    pub representation: Representation,
    pub curve: Vec<f64>,
}

/// Trains an encoder (plus the task head, discarded afterwards) on one task.
pub fn train_ssl(
    ev: &LossEvaluator,
    g: &Graph,
    art: &FrozenArtifacts,
    arch: &EncoderArch,
    opts: &OptimizerConfig,
    rng: &Rng,
) -> Result<Trained> {
    let out = train_joint(&[ev], g, art, arch, opts, false, rng)?;
    Ok(Trained {
        representation: Representation {
            task: ev.id().to_string(),
            seed: rng.seed(),
            dataset: g.name.clone(),
            matrix: out.embedding,
        },
        curve: out.curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_normalizes() {
        let a = softmax(&[0.3, -2.0, 5.0]);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[0.0]), vec![1.0]);
    }

    #[test]
    fn table_defaults() {
        assert_eq!(default_arch(TaskId::GraphComp, 8).depth(), 3);
        assert_eq!(default_arch(TaskId::Gae, 8).gcn_layers, 2);
        assert_eq!(default_opts(TaskId::Dgi, "x").patience, Some(20));
        assert_eq!(
            default_opts(TaskId::GraphComp, "CiteSeer").weight_decay,
            0.7
        );
    }
}
