//! Central finite-difference checks for every hand-written backward pass.

use crate::encoder::{Activation, EncoderArch, EncoderParams};
use crate::error::Result;
use crate::graph::{
    freeze_artifacts, normalize_adjacency, synth_sbm, ArtifactConfig, FrozenArtifacts, Graph,
    SbmParams,
};
use crate::numeric::{Matrix, ReadoutKind, Rng};
use crate::tasks::{build_target, TaskId};
use crate::tcm::{
    enhance_objective_grad, tcm_loss_grad, FitLoss, MixWeights, TcmModel, TcmVariant,
};

pub const GRAD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this in norm are compared absolutely.
const GRAD_ABS_FLOOR: f64 = 1e-8;

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)` between two gradients, or the
/// absolute difference when both are below the floor.
pub fn grad_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.frobenius().max(numeric.frobenius());
    if scale < GRAD_ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Matrix, mut f: impl FnMut(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        let h = 1e-6 * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// One mismatching gradient: where it was and how large the error is.
pub struct Mismatch {
    pub what: String,
    pub error: f64,
}

fn compare(out: &mut Vec<Mismatch>, what: String, analytic: &Matrix, numeric: &Matrix) {
    let error = grad_error(analytic, numeric);
    if error.is_nan() || error > GRAD_REL_TOL {
        out.push(Mismatch { what, error });
    }
}

/// Small random graph with N in [6, 16] and frozen artifacts sized for it.
pub fn small_instance(rng: &Rng, d: usize) -> Result<(Graph, FrozenArtifacts)> {
    let mut r = rng.split(0);
    let blocks = 2 + r.below(2);
    let per = (6 + r.below(11)) / blocks;
    let params = SbmParams {
        blocks,
        nodes_per_block: per.max(3),
        p_in: 0.7,
        p_out: 0.15,
        feat_dim: 2 + r.below(5),
        noise: 0.5,
    };
    let cfg = ArtifactConfig {
        edge_mask_ratio: 0.2,
        clusters: 2,
        subgraph_size: 3,
        embed_dim: d,
        ..Default::default()
    };
    // a sparse draw can leave nothing to mask; retry on the next stream
    let mut last = None;
    for attempt in 1..=20 {
        let g = synth_sbm(&params, &mut rng.split(attempt))?;
        match freeze_artifacts(&g, &cfg, &rng.split(100 + attempt)) {
            Ok(a) => return Ok((g, a)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Checks the head and representation gradients of every task's training
/// objective, including the corrupted branch of the contrastive task.
pub fn check_task_losses(rng: &Rng) -> Result<Vec<Mismatch>> {
    let mut r = rng.split(1);
    let d = 2 + r.below(5);
    let (g, art) = small_instance(rng, d)?;
    let n = g.n_nodes();
    let mut out = Vec::new();
    for id in TaskId::ALL {
        let ev = build_target(id, &g, &art)?;
        let h = r.normal_matrix(n, d);
        let h_neg = r.normal_matrix(n, d);
        let head: Vec<Matrix> = ev
            .head_shapes(d)
            .into_iter()
            .map(|(a, b)| r.uniform_matrix(a, b, -1.0, 1.0))
            .collect();
        let negs: Vec<Option<&Matrix>> = if id == TaskId::Dgi {
            vec![None, Some(&h_neg)]
        } else {
            vec![None]
        };
        for neg in negs {
            let tag = if neg.is_some() { "+neg" } else { "" };
            let an = ev.evaluate(&h, neg, &head, true)?;
            let fd = numeric_grad(&h, |x| Ok(ev.evaluate(x, neg, &head, false)?.objective))?;
            compare(&mut out, format!("{id}{tag} d_h"), &an.d_h, &fd);
            if let (Some(hn), Some(dn)) = (neg, &an.d_h_neg) {
                let fd = numeric_grad(hn, |x| {
                    Ok(ev.evaluate(&h, Some(x), &head, false)?.objective)
                })?;
                compare(&mut out, format!("{id}{tag} d_h_neg"), dn, &fd);
            }
            for (p, g_an) in an.d_head.iter().enumerate() {
                let fd = numeric_grad(&head[p], |x| {
                    let mut hd = head.clone();
                    hd[p] = x.clone();
                    Ok(ev.evaluate(&h, neg, &hd, false)?.objective)
                })?;
                compare(&mut out, format!("{id}{tag} head[{p}]"), g_an, &fd);
            }
        }
    }
    Ok(out)
}

/// Checks the encoder backward pass against a random linear functional of
/// its output.
pub fn check_encoder(rng: &Rng) -> Result<Vec<Mismatch>> {
    let mut r = rng.split(2);
    let d = 2 + r.below(5);
    let (g, _) = small_instance(rng, d)?;
    let a_hat = normalize_adjacency(&g);
    let mut arch = EncoderArch::new(r.below(3), 0, d);
    arch.linear_layers = (arch.gcn_layers == 0) as usize + r.below(2);
    arch.hidden_activation = [Activation::Relu, Activation::Prelu][r.below(2)];
    let mut enc = EncoderParams::init(&arch, g.features().cols(), &mut r)?;
    for l in 0..enc.layers.len() {
        enc.params[3 * l + 1] = r.normal_matrix(1, d).scale(0.1);
    }
    let probe = r.normal_matrix(g.n_nodes(), d);
    let (_, cache) = enc.forward(&a_hat, g.features())?;
    let grads = enc.backward(&a_hat, &cache, &probe)?;
    let frozen = enc.frozen_mask();
    let mut out = Vec::new();
    for (p, g_an) in grads.iter().enumerate() {
        if frozen[p] {
            continue;
        }
        let fd = numeric_grad(&enc.params[p], |x| {
            let mut e = enc.clone();
            e.params[p] = x.clone();
            Ok(dot_all(&e.encode(&a_hat, g.features())?, &probe))
        })?;
        compare(&mut out, format!("encoder param[{p}]"), g_an, &fd);
    }
    Ok(out)
}

fn dot_all(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_reps(r: &mut Rng, k: usize) -> Vec<Matrix> {
    let n = 6 + r.below(11);
    let d = 2 + r.below(5);
    (0..k).map(|_| r.normal_matrix(n, d)).collect()
}

/// Checks the TCM fitting-loss gradients for both loss shapes, every readout
/// and with and without representation normalization.
pub fn check_tcm(rng: &Rng) -> Result<Vec<Mismatch>> {
    let mut r = rng.split(3);
    let k = 2 + r.below(3);
    let reps = random_reps(&mut r, k);
    let refs: Vec<&Matrix> = reps.iter().collect();
    let d = reps[0].cols();
    let target = r.uniform_matrix(k, k, 0.5, 2.0);
    let entries: Vec<usize> = (0..k * k).filter(|_| r.bernoulli(0.7)).collect();
    let mut out = Vec::new();
    for (readout, normalize) in [
        (ReadoutKind::Mean, false),
        (ReadoutKind::Sum, true),
        (ReadoutKind::Max, false),
    ] {
        for variant in [TcmVariant::Full, TcmVariant::NoExp] {
            let mut m = TcmModel::init(d, 1 + r.below(4), variant, readout, 0.5, &mut r)?;
            m.normalize = normalize;
            for loss in [FitLoss::Squared, FitLoss::Absolute] {
                let (_, gr, gt, _) = tcm_loss_grad(&m, &refs, &target, &entries, loss)?;
                let tag = format!(
                    "tcm {readout:?} norm={normalize} {} {loss:?}",
                    variant.as_str()
                );
                let fd = numeric_grad(&m.w_r, |x| {
                    let mm = TcmModel {
                        w_r: x.clone(),
                        ..m.clone()
                    };
                    Ok(tcm_loss_grad(&mm, &refs, &target, &entries, loss)?.0)
                })?;
                compare(&mut out, format!("{tag} w_r"), &gr, &fd);
                let fd = numeric_grad(&m.w_t, |x| {
                    let mm = TcmModel {
                        w_t: x.clone(),
                        ..m.clone()
                    };
                    Ok(tcm_loss_grad(&mm, &refs, &target, &entries, loss)?.0)
                })?;
                compare(&mut out, format!("{tag} w_t"), &gt, &fd);
            }
        }
    }
    Ok(out)
}

/// Checks the gradient of the enhancement objective in the mixing weights.
pub fn check_enhancement(rng: &Rng) -> Result<Vec<Mismatch>> {
    let mut r = rng.split(4);
    let k = 2 + r.below(3);
    let reps = random_reps(&mut r, k);
    let refs: Vec<&Matrix> = reps.iter().collect();
    let d = reps[0].cols();
    let coef: Vec<f64> = (0..k).map(|_| r.uniform_range(0.2, 2.0)).collect();
    let mut out = Vec::new();
    for normalize in [false, true] {
        let mut m = TcmModel::init(
            d,
            1 + r.below(4),
            TcmVariant::Full,
            ReadoutKind::Mean,
            0.5,
            &mut r,
        )?;
        m.normalize = normalize;
        let w = MixWeights {
            w: r.uniform_matrix(k, d, 0.0, 1.0),
        };
        let (_, g) = enhance_objective_grad(&m, &refs, &coef, &w)?;
        let fd = numeric_grad(&w.w, |x| {
            Ok(enhance_objective_grad(&m, &refs, &coef, &MixWeights { w: x.clone() })?.0)
        })?;
        compare(&mut out, format!("enhance norm={normalize}"), &g, &fd);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_grad_of_quadratic() {
        let x = Matrix::from_fn(2, 2, |r, c| (r * 2 + c) as f64 - 1.5);
        let g = numeric_grad(&x, |m| Ok(m.data().iter().map(|v| v * v).sum())).unwrap();
        assert!(grad_error(&x.scale(2.0), &g) < 1e-8);
    }

    #[test]
    fn grad_error_floor_is_absolute() {
        let a = Matrix::filled(1, 1, 1e-12);
        let b = Matrix::filled(1, 1, 3e-12);
        assert!(grad_error(&a, &b) < 1e-11);
    }
}
