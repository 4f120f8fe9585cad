//! Task correlation model: predicts `Cor(t_i, t_j)` from the two
//! representations as `exp(q_i · k_j)` with `q = readout(Ĥ_i W_r)` and
//! `k = readout(Ĥ_j W_t)`, and drives the enhancement mixer.
//!
//! With `normalize` set, `Ĥ` is the representation divided by its RMS row
//! norm: correlation values do not depend on the scale of a representation,
//! so neither does the model. Otherwise `Ĥ = H`.

mod enhance;

use serde::{Deserialize, Serialize};

pub use enhance::{
    enhance, enhance_objective_grad, mix, EnhanceConfig, Enhanced, MixWeights, ENHANCED_TASK,
};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::numeric::{
    check_divergence, dot, readout, readout_backward, Matrix, Optimizer, OptimizerConfig,
    ReadoutKind, Rng,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcmVariant {
    #[default]
    Full,
    /// `W_r` frozen at the (rectangular) identity.
    NoWr,
    /// `W_t` frozen at the (rectangular) identity.
    NoWt,
    /// Raw inner product without the exponential.
    NoExp,
}

impl TcmVariant {
    pub const ALL: [TcmVariant; 4] = [
        TcmVariant::Full,
        TcmVariant::NoWr,
        TcmVariant::NoWt,
        TcmVariant::NoExp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TcmVariant::Full => "full",
            TcmVariant::NoWr => "no_wr",
            TcmVariant::NoWt => "no_wt",
            TcmVariant::NoExp => "no_exp",
        }
    }
}

/// Per-entry fitting loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitLoss {
    #[default]
    Absolute,
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcmConfig {
    /// Fraction of the k² entries used for training; `1.0` trains on every
    /// entry and selects on training error.
    pub split_frac: f64,
    /// Projection width; `None` means `max(d / 2, 4)`.
    pub d_prime: Option<usize>,
    pub variant: TcmVariant,
    pub loss: FitLoss,
    pub readout: ReadoutKind,
    /// Projections start uniform in `±init_scale/√d`.
    pub init_scale: f64,
    /// Divide each representation by its RMS row norm before projecting.
    pub normalize: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for TcmConfig {
    fn default() -> Self {
        Self {
            split_frac: 0.7,
            d_prime: None,
            variant: TcmVariant::Full,
            loss: FitLoss::Absolute,
            readout: ReadoutKind::Mean,
            init_scale: 0.1,
            normalize: false,
            optimizer: OptimizerConfig::adam(0.01, 0.0, 1000),
        }
    }
}

impl TcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_frac > 0.0 && self.split_frac <= 1.0) {
            return Err(Error::Config(format!(
                "tcm split_frac {} not in (0, 1]",
                self.split_frac
            )));
        }
        if self.d_prime == Some(0) {
            return Err(Error::Config("tcm d_prime must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn resolved_d_prime(&self, d: usize) -> usize {
        self.d_prime.unwrap_or((d / 2).max(4))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcmModel {
    pub w_r: Matrix,
    pub w_t: Matrix,
    pub readout: ReadoutKind,
    pub use_exp: bool,
    #[serde(default)]
    pub normalize: bool,
    pub d: usize,
    pub d_prime: usize,
}

/// RMS row norm `‖H‖_F / √N`.
pub fn rms_norm(h: &Matrix) -> f64 {
    h.frobenius() / (h.rows().max(1) as f64).sqrt()
}

/// `H / rms_norm(H)`; an all-zero matrix is returned unchanged.
pub fn unit_rms(h: &Matrix) -> Matrix {
    let s = rms_norm(h);
    if s > 0.0 {
        h.scale(1.0 / s)
    } else {
        h.clone()
    }
}

/// Pulls a gradient with respect to `unit_rms(h)` back to `h`.
pub fn unit_rms_backward(h: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    let s = rms_norm(h);
    if s == 0.0 {
        return Ok(upstream.clone());
    }
    let n = h.rows() as f64;
    let inner: f64 = upstream
        .data()
        .iter()
        .zip(h.data())
        .map(|(g, x)| g * x)
        .sum();
    let mut out = upstream.scale(1.0 / s);
    out.axpy(-inner / (n * s * s * s), h)?;
    Ok(out)
}

fn rect_identity(d: usize, d_prime: usize) -> Matrix {
    Matrix::from_fn(d, d_prime, |r, c| if r == c { 1.0 } else { 0.0 })
}

impl TcmModel {
    /// Projections drawn uniformly in `±scale/√d`, or the identity for a
    /// frozen ablated transform.
    pub fn init(
        d: usize,
        d_prime: usize,
        variant: TcmVariant,
        readout: ReadoutKind,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if d == 0 || d_prime == 0 {
            return Err(Error::Parameter("tcm widths must be positive".into()));
        }
        let bound = scale / (d as f64).sqrt();
        let mut w_r = rng.uniform_matrix(d, d_prime, -bound, bound);
        let mut w_t = rng.uniform_matrix(d, d_prime, -bound, bound);
        match variant {
            TcmVariant::NoWr => w_r = rect_identity(d, d_prime),
            TcmVariant::NoWt => w_t = rect_identity(d, d_prime),
            _ => {}
        }
        Ok(Self {
            w_r,
            w_t,
            readout,
            use_exp: variant != TcmVariant::NoExp,
            normalize: false,
            d,
            d_prime,
        })
    }

    fn check(&self, h: &Matrix) -> Result<()> {
        if h.cols() != self.d {
            return Err(Error::dims("tcm representation width", self.d, h.cols()));
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, h: &Matrix) -> Matrix {
        if self.normalize {
            unit_rms(h)
        } else {
            h.clone()
        }
    }

    pub(crate) fn prepare_backward(&self, h: &Matrix, upstream: Matrix) -> Result<Matrix> {
        if self.normalize {
            unit_rms_backward(h, &upstream)
        } else {
            Ok(upstream)
        }
    }

    pub fn query(&self, h: &Matrix) -> Result<Vec<f64>> {
        self.check(h)?;
        Ok(readout(&self.prepare(h).matmul(&self.w_r)?, self.readout))
    }

    pub fn key(&self, h: &Matrix) -> Result<Vec<f64>> {
        self.check(h)?;
        Ok(readout(&self.prepare(h).matmul(&self.w_t)?, self.readout))
    }

    fn link(&self, s: f64) -> f64 {
        if self.use_exp {
            s.exp()
        } else {
            s
        }
    }
}

/// Predicted correlation of `h_i` (training side) on `h_j` (evaluated side).
pub fn tcm_forward(m: &TcmModel, h_i: &Matrix, h_j: &Matrix) -> Result<f64> {
    Ok(m.link(dot(&m.query(h_i)?, &m.key(h_j)?)))
}

pub fn tcm_predict_matrix(m: &TcmModel, reps: &[&Matrix]) -> Result<Matrix> {
    let q = reps
        .iter()
        .map(|h| m.query(h))
        .collect::<Result<Vec<_>>>()?;
    let k = reps.iter().map(|h| m.key(h)).collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_fn(reps.len(), reps.len(), |i, j| {
        m.link(dot(&q[i], &k[j]))
    }))
}

/// Mean fitting loss over `entries` (flat ids `i·k + j`), its gradients with
/// respect to `w_r` and `w_t`, and the full predicted matrix.
pub fn tcm_loss_grad(
    m: &TcmModel,
    reps: &[&Matrix],
    target: &Matrix,
    entries: &[usize],
    loss: FitLoss,
) -> Result<(f64, Matrix, Matrix, Matrix)> {
    let k = reps.len();
    if target.shape() != (k, k) {
        return Err(Error::dims(
            "tcm target",
            format!("{k}x{k}"),
            format!("{:?}", target.shape()),
        ));
    }
    for h in reps {
        m.check(h)?;
    }
    let unit: Vec<Matrix> = reps.iter().map(|h| m.prepare(h)).collect();
    let pr: Vec<Matrix> = unit
        .iter()
        .map(|h| h.matmul(&m.w_r))
        .collect::<Result<_>>()?;
    let pt: Vec<Matrix> = unit
        .iter()
        .map(|h| h.matmul(&m.w_t))
        .collect::<Result<_>>()?;
    let q: Vec<Vec<f64>> = pr.iter().map(|p| readout(p, m.readout)).collect();
    let kk: Vec<Vec<f64>> = pt.iter().map(|p| readout(p, m.readout)).collect();
    let pred = Matrix::from_fn(k, k, |i, j| m.link(dot(&q[i], &kk[j])));
    let mut dq = vec![vec![0.0; m.d_prime]; k];
    let mut dk = vec![vec![0.0; m.d_prime]; k];
    let scale = 1.0 / entries.len().max(1) as f64;
    let mut total = 0.0;
    for &e in entries {
        let (i, j) = (e / k, e % k);
        let f = pred[(i, j)];
        let r = f - target[(i, j)];
        let (l, g) = match loss {
            FitLoss::Absolute => (r.abs(), if r == 0.0 { 0.0 } else { r.signum() }),
            FitLoss::Squared => (r * r, 2.0 * r),
        };
        total += l * scale;
        let ds = g * scale * if m.use_exp { f } else { 1.0 };
        for c in 0..m.d_prime {
            dq[i][c] += ds * kk[j][c];
            dk[j][c] += ds * q[i][c];
        }
    }
    let mut gr = Matrix::zeros(m.d, m.d_prime);
    let mut gt = Matrix::zeros(m.d, m.d_prime);
    for i in 0..k {
        gr.add_assign(&unit[i].t_matmul(&readout_backward(&pr[i], m.readout, &dq[i]))?)?;
        gt.add_assign(&unit[i].t_matmul(&readout_backward(&pt[i], m.readout, &dk[i]))?)?;
    }
    Ok((total, gr, gt, pred))
}

/// Mean of `|pred − true| / true` over `entries`.
pub fn relative_error(pred: &Matrix, target: &Matrix, entries: &[usize]) -> f64 {
    let k = target.cols();
    let s: f64 = entries
        .iter()
        .map(|&e| ((pred.data()[e] - target.data()[e]) / target[(e / k, e % k)]).abs())
        .sum();
    s / entries.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcmFitReport {
    pub variant: TcmVariant,
    pub train_entry_ids: Vec<usize>,
    pub val_entry_ids: Vec<usize>,
    pub train_rel_err: f64,
    /// `None` when every entry is used for training.
    pub val_rel_err: Option<f64>,
    pub best_epoch: usize,
    pub loss_curve: Vec<f64>,
}

/// Shuffled split of the `k²` entry ids into training and validation sets.
pub fn split_entries(k: usize, split_frac: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let total = k * k;
    let mut ids = rng.permutation(total);
    let n_train = if split_frac >= 1.0 {
        total
    } else {
        let n = ((split_frac * total as f64).round() as usize).clamp(1, total);
        if n == total {
            return Err(Error::Parameter(format!(
                "split_frac {split_frac} leaves no validation entry among {total}"
            )));
        }
        n
    };
    let val = ids.split_off(n_train);
    ids.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((ids, val))
}

/// Fits the model to the correlation values by gradient descent. The
/// returned model is the one with the lowest validation error seen (training
/// error when there is no validation set).
pub fn tcm_fit(
    reps: &[&Matrix],
    target: &Matrix,
    cfg: &TcmConfig,
    rng: &Rng,
) -> Result<(TcmModel, TcmFitReport)> {
    cfg.validate()?;
    let k = reps.len();
    if k < 2 {
        return Err(Error::Parameter("tcm needs at least two tasks".into()));
    }
    if target.shape() != (k, k) {
        return Err(Error::dims(
            "tcm target",
            format!("{k}x{k}"),
            format!("{:?}", target.shape()),
        ));
    }
    if target.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Parameter(
            "correlation values must be positive and finite".into(),
        ));
    }
    let d = reps[0].cols();
    if let Some(h) = reps
        .iter()
        .find(|h| h.cols() != d || h.rows() != reps[0].rows())
    {
        return Err(Error::dims(
            "tcm representations",
            format!("{}x{d}", reps[0].rows()),
            format!("{:?}", h.shape()),
        ));
    }
    let (train, val) = split_entries(k, cfg.split_frac, &mut rng.split(0))?;
    let mut model = TcmModel::init(
        d,
        cfg.resolved_d_prime(d),
        cfg.variant,
        cfg.readout,
        cfg.init_scale,
        &mut rng.split(1),
    )?;
    model.normalize = cfg.normalize;
    let frozen = [
        cfg.variant == TcmVariant::NoWr,
        cfg.variant == TcmVariant::NoWt,
    ];
    let mut params = [model.w_r.clone(), model.w_t.clone()];
    let mut opt = Optimizer::new(&cfg.optimizer, &params);
    let select_on = if val.is_empty() { &train } else { &val };

    let mut curve = Vec::with_capacity(cfg.optimizer.epochs);
    let mut best = (f64::INFINITY, 0, params.clone());
    for epoch in 1..=cfg.optimizer.epochs {
        model.w_r = params[0].clone();
        model.w_t = params[1].clone();
        let (loss, gr, gt, pred) = tcm_loss_grad(&model, reps, target, &train, cfg.loss)?;
        check_divergence(loss, epoch)?;
        curve.push(loss);
        let err = relative_error(&pred, target, select_on);
        if err < best.0 {
            best = (err, epoch, params.clone());
        }
        opt.step(&mut params, &[gr, gt], &frozen);
    }
    let [w_r, w_t] = best.2;
    model.w_r = w_r;
    model.w_t = w_t;
    let pred = tcm_predict_matrix(&model, reps)?;
    let report = TcmFitReport {
        variant: cfg.variant,
        train_rel_err: relative_error(&pred, target, &train),
        val_rel_err: (!val.is_empty()).then(|| relative_error(&pred, target, &val)),
        train_entry_ids: train,
        val_entry_ids: val,
        best_epoch: best.1,
        loss_curve: curve,
    };
    Ok((model, report))
}

/// Convenience wrapper taking the stored correlation matrix.
pub fn tcm_fit_matrix(
    reps: &[&Matrix],
    cm: &CorrelationMatrix,
    cfg: &TcmConfig,
    rng: &Rng,
) -> Result<(TcmModel, TcmFitReport)> {
    tcm_fit(reps, &cm.values, cfg, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub held_out: usize,
    /// Mean relative error over the held-out row and column (diagonal once).
    pub rel_err: f64,
    pub fit: TcmFitReport,
}

/// Fits on every task except `held_out` and scores the predictions for the
/// pairs involving it.
pub fn tcm_holdout(
    reps: &[&Matrix],
    target: &Matrix,
    held_out: usize,
    cfg: &TcmConfig,
    rng: &Rng,
) -> Result<HoldoutReport> {
    let k = reps.len();
    if held_out >= k {
        return Err(Error::Parameter(format!(
            "held-out index {held_out} out of range for {k} tasks"
        )));
    }
    let keep: Vec<usize> = (0..k).filter(|&i| i != held_out).collect();
    let sub_reps: Vec<&Matrix> = keep.iter().map(|&i| reps[i]).collect();
    let sub = Matrix::from_fn(k - 1, k - 1, |a, b| target[(keep[a], keep[b])]);
    let (model, fit) = tcm_fit(&sub_reps, &sub, cfg, rng)?;
    let pred = tcm_predict_matrix(&model, reps)?;
    let entries: Vec<usize> = (0..k * k)
        .filter(|&e| e / k == held_out || e % k == held_out)
        .collect();
    Ok(HoldoutReport {
        held_out,
        rel_err: relative_error(&pred, target, &entries),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(w_r: f64, w_t: f64, use_exp: bool) -> TcmModel {
        TcmModel {
            w_r: Matrix::filled(1, 1, w_r),
            w_t: Matrix::filled(1, 1, w_t),
            readout: ReadoutKind::Mean,
            use_exp,
            normalize: false,
            d: 1,
            d_prime: 1,
        }
    }

    #[test]
    fn hand_evaluated_forward() {
        let (hi, hj) = (Matrix::filled(1, 1, 2.0), Matrix::filled(1, 1, 3.0));
        let v = tcm_forward(&tiny(0.5, 1.0, true), &hi, &hj).unwrap();
        assert!((v - 3f64.exp()).abs() < 1e-12);
        assert_eq!(tcm_forward(&tiny(0.5, 1.0, false), &hi, &hj).unwrap(), 3.0);
        assert_eq!(tcm_forward(&tiny(0.0, 0.0, true), &hi, &hj).unwrap(), 1.0);
    }

    #[test]
    fn forward_is_asymmetric() {
        let m = TcmModel {
            w_r: Matrix::identity(2),
            w_t: Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap(),
            readout: ReadoutKind::Mean,
            use_exp: true,
            normalize: false,
            d: 2,
            d_prime: 2,
        };
        let (a, b) = (
            Matrix::row_vector(&[1.0, 0.0]),
            Matrix::row_vector(&[0.0, 1.0]),
        );
        assert_ne!(
            tcm_forward(&m, &a, &b).unwrap(),
            tcm_forward(&m, &b, &a).unwrap()
        );
    }

    #[test]
    fn zero_model_predicts_ones() {
        let mut m = TcmModel::init(
            3,
            2,
            TcmVariant::Full,
            ReadoutKind::Mean,
            1.0,
            &mut Rng::new(0),
        )
        .unwrap();
        m.w_r = Matrix::zeros(3, 2);
        let h = Matrix::filled(4, 3, 1.5);
        assert_eq!(
            tcm_predict_matrix(&m, &[&h, &h]).unwrap(),
            Matrix::filled(2, 2, 1.0)
        );
    }

    #[test]
    fn split_covers_all_entries() {
        let (tr, va) = split_entries(8, 0.7, &mut Rng::new(3)).unwrap();
        assert_eq!(tr.len(), 45);
        assert_eq!(va.len(), 19);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        assert!(split_entries(2, 0.95, &mut Rng::new(0)).is_err());
        assert_eq!(split_entries(2, 1.0, &mut Rng::new(0)).unwrap().1.len(), 0);
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = Rng::new(4);
        let a = rng.normal_matrix(6, 4);
        let b = rng.normal_matrix(6, 4);
        let cfg = TcmConfig {
            split_frac: 1.0,
            ..TcmConfig::default()
        };
        let (_, rep) = tcm_fit(&[&a, &b], &Matrix::filled(2, 2, 1.0), &cfg, &Rng::new(1)).unwrap();
        assert!(rep.train_rel_err < 1e-3, "{}", rep.train_rel_err);
        assert_eq!(rep.val_rel_err, None);
    }
}
