use serde::{Deserialize, Serialize};

use super::TcmModel;
use crate::error::{Error, Result};
use crate::numeric::{
    check_divergence, dot, readout, readout_backward, Matrix, Optimizer, OptimizerConfig,
};

pub const ENHANCED_TASK: &str = "tcm-enhanced";

/// Per-task, per-dimension mixing coefficients: `H'(a, b) = Σ_i H_i(a, b)·w(i, b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub w: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    pub optimizer: OptimizerConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(0.01, 0.0, 300),
        }
    }
}

pub fn mix(reps: &[&Matrix], w: &MixWeights) -> Result<Matrix> {
    let (k, d) = w.w.shape();
    if reps.len() != k {
        return Err(Error::dims("mixer task count", k, reps.len()));
    }
    let n = reps.first().map_or(0, |h| h.rows());
    let mut out = Matrix::zeros(n, d);
    for (i, h) in reps.iter().enumerate() {
        if h.shape() != (n, d) {
            return Err(Error::dims(
                "mixer representation",
                format!("{n}x{d}"),
                format!("{:?}", h.shape()),
            ));
        }
        for r in 0..n {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o += h[(r, c)] * w.w[(i, c)];
            }
        }
    }
    Ok(out)
}

/// `Σ_i c_i·|tcm(H', H_i)|` with `H' = mix(reps, w)` and its gradient with
/// respect to the mixing weights.
pub fn enhance_objective_grad(
    m: &TcmModel,
    reps: &[&Matrix],
    coef: &[f64],
    w: &MixWeights,
) -> Result<(f64, Matrix)> {
    if coef.len() != reps.len() {
        return Err(Error::dims(
            "enhancement coefficients",
            reps.len(),
            coef.len(),
        ));
    }
    let h = mix(reps, w)?;
    let p = m.prepare(&h).matmul(&m.w_r)?;
    let q = readout(&p, m.readout);
    let mut dq = vec![0.0; m.d_prime];
    let mut obj = 0.0;
    for (hi, &c) in reps.iter().zip(coef) {
        let k = m.key(hi)?;
        let f = m.link(dot(&q, &k));
        obj += c * f.abs();
        let ds = c * f.signum() * if m.use_exp { f } else { 1.0 };
        for (a, b) in dq.iter_mut().zip(&k) {
            *a += ds * b;
        }
    }
    let dh = m.prepare_backward(&h, readout_backward(&p, m.readout, &dq).matmul_t(&m.w_r)?)?;
    let (k, d) = w.w.shape();
    let grad = Matrix::from_fn(k, d, |i, c| {
        (0..h.rows()).map(|r| dh[(r, c)] * reps[i][(r, c)]).sum()
    });
    Ok((obj, grad))
}

pub struct Enhanced {
    pub embedding: Matrix,
    pub weights: MixWeights,
    pub objective_curve: Vec<f64>,
}

/// Trains the mixer against a frozen model, weighting each task by the
/// inverse of its ATD. Starts from the plain average of the representations.
pub fn enhance(
    m: &TcmModel,
    reps: &[&Matrix],
    atd: &[f64],
    cfg: &EnhanceConfig,
) -> Result<Enhanced> {
    cfg.optimizer.validate()?;
    if reps.is_empty() || atd.len() != reps.len() {
        return Err(Error::dims("enhancement task count", reps.len(), atd.len()));
    }
    if atd.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Parameter(
            "ATD values must be positive and finite".into(),
        ));
    }
    let coef: Vec<f64> = atd.iter().map(|a| 1.0 / a).collect();
    let k = reps.len();
    let mut params = [Matrix::filled(k, m.d, 1.0 / k as f64)];
    let mut opt = Optimizer::new(&cfg.optimizer, &params);
    let mut curve = Vec::with_capacity(cfg.optimizer.epochs + 1);
    for epoch in 1..=cfg.optimizer.epochs {
        let w = MixWeights {
            w: params[0].clone(),
        };
        let (obj, g) = enhance_objective_grad(m, reps, &coef, &w)?;
        check_divergence(obj, epoch)?;
        curve.push(obj);
        opt.step(&mut params, &[g], &[false]);
    }
    let weights = MixWeights {
        w: params[0].clone(),
    };
    let (last, _) = enhance_objective_grad(m, reps, &coef, &weights)?;
    curve.push(last);
    Ok(Enhanced {
        embedding: mix(reps, &weights)?,
        weights,
        objective_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ReadoutKind, Rng};
    use crate::tcm::TcmVariant;

    #[test]
    fn ones_mixer_is_identity_for_one_task() {
        let h = Rng::new(2).normal_matrix(5, 3);
        let w = MixWeights {
            w: Matrix::filled(1, 3, 1.0),
        };
        assert_eq!(mix(&[&h], &w).unwrap(), h);
    }

    #[test]
    fn objective_decreases() {
        let mut rng = Rng::new(9);
        let reps: Vec<Matrix> = (0..3).map(|_| rng.normal_matrix(6, 4)).collect();
        let refs: Vec<&Matrix> = reps.iter().collect();
        let m = TcmModel::init(4, 4, TcmVariant::Full, ReadoutKind::Mean, 1.0, &mut rng).unwrap();
        let e = enhance(&m, &refs, &[1.0, 2.0, 0.5], &EnhanceConfig::default()).unwrap();
        assert!(e.objective_curve.last().unwrap() <= &e.objective_curve[0]);
    }
}
