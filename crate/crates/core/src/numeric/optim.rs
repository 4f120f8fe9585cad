//! First-order optimizers over lists of matrix parameters.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters plus the epoch budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// Early stopping on training loss; `epochs` then acts as a cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, weight_decay: f64, epochs: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            weight_decay,
            epochs,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            patience: None,
        }
    }

    pub fn sgd(learning_rate: f64, epochs: usize) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate, 0.0, epochs)
        }
    }

    /// Linear-head protocol used for cross-task and downstream fits:
    /// Adam, lr 0.001, weight decay 0.0005, 300 epochs.
    pub fn probe_default() -> Self {
        Self::adam(0.001, 0.0005, 300)
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = Some(patience);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Optimizer state for one fit. Weight decay is applied as an L2 term added
/// to the gradient (coupled decay).
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, params: &[Matrix]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            cfg: cfg.clone(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `frozen[i] == true` leaves parameter `i` untouched.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], frozen: &[bool]) {
        self.step += 1;
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            let p = p.data_mut();
            let g = g.data();
            match self.cfg.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in p.iter_mut().zip(g) {
                        *w -= lr * (gi + wd * *w);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for j in 0..p.len() {
                        let gi = g[j] + wd * p[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * gi;
                        v[j] = b2 * v[j] + (1.0 - b2) * gi * gi;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Returns a divergence error if `loss` is non-finite or above the limit.
pub fn check_divergence(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let cfg = OptimizerConfig::adam(0.1, 0.0, 500);
        let mut p = vec![Matrix::row_vector(&[3.0, -2.0])];
        let mut opt = Optimizer::new(&cfg, &p);
        for _ in 0..cfg.epochs {
            let g = p[0].scale(2.0);
            opt.step(&mut p, &[g], &[false]);
        }
        assert!(p[0].frobenius() < 1e-2);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let cfg = OptimizerConfig::sgd(0.5, 1);
        let mut p = vec![Matrix::filled(1, 1, 1.0), Matrix::filled(1, 1, 1.0)];
        let mut opt = Optimizer::new(&cfg, &p);
        let g = vec![Matrix::filled(1, 1, 1.0), Matrix::filled(1, 1, 1.0)];
        opt.step(&mut p, &g, &[true, false]);
        assert_eq!(p[0][(0, 0)], 1.0);
        assert_eq!(p[1][(0, 0)], 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::adam(0.0, 0.0, 10).validate().is_err());
        assert!(OptimizerConfig::adam(0.1, 0.0, 0).validate().is_err());
        assert!(OptimizerConfig::probe_default().validate().is_ok());
    }
}
