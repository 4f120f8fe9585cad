//! Fitting a linear tuning head on a frozen representation.

use super::optim::{check_divergence, Optimizer};
use super::{Matrix, OptimizerConfig, Rng};
use crate::error::{Error, Result};

/// A loss over a frozen representation `H` and a small set of head parameters.
///
/// The first head parameter is always the linear map applied to `H` (or to a
/// fixed featurization of it); further entries are auxiliary parameters that
/// some objectives need (a bilinear discriminator, for instance).
pub trait HeadObjective: Sync {
    /// Parameter shapes for a representation with `input_dim` columns.
    fn head_shapes(&self, input_dim: usize) -> Vec<(usize, usize)>;

    /// Training objective and its gradient with respect to every head parameter.
    fn loss_and_head_grad(&self, h: &Matrix, head: &[Matrix]) -> Result<(f64, Vec<Matrix>)>;

    /// Reported loss. Defaults to the training objective; regression losses
    /// train on `½‖r‖²` and report `‖r‖` (same minimizer).
    fn loss(&self, h: &Matrix, head: &[Matrix]) -> Result<f64> {
        Ok(self.loss_and_head_grad(h, head)?.0)
    }

    /// Default initialization: uniform in `±1/√fan_in`.
    fn init_head(&self, input_dim: usize, rng: &mut Rng) -> Vec<Matrix> {
        self.head_shapes(input_dim)
            .into_iter()
            .map(|(r, c)| {
                let bound = 1.0 / (r.max(1) as f64).sqrt();
                rng.uniform_matrix(r, c, -bound, bound)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct HeadFit {
    pub head: Vec<Matrix>,
    /// Reported loss at the returned head, after the full budget.
    pub final_loss: f64,
    /// Training objective per epoch.
    pub curve: Vec<f64>,
}

impl HeadFit {
    pub fn w(&self) -> &Matrix {
        &self.head[0]
    }
}

/// Trains the head of `objective` on frozen `h` for the full epoch budget.
pub fn linear_head_fit(
    h: &Matrix,
    objective: &dyn HeadObjective,
    opts: &OptimizerConfig,
    rng: &mut Rng,
) -> Result<HeadFit> {
    opts.validate()?;
    if h.rows() == 0 || h.cols() == 0 {
        return Err(Error::Parameter("representation must be non-empty".into()));
    }
    let mut head = objective.init_head(h.cols(), rng);
    let mut opt = Optimizer::new(opts, &head);
    let frozen = vec![false; head.len()];
    let mut curve = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let (loss, grads) = objective.loss_and_head_grad(h, &head)?;
        check_divergence(loss, epoch)?;
        curve.push(loss);
        opt.step(&mut head, &grads, &frozen);
    }
    let final_loss = objective.loss(h, &head)?;
    check_divergence(final_loss, opts.epochs)?;
    Ok(HeadFit {
        head,
        final_loss,
        curve,
    })
}

/// `‖Z − Y‖_F` and its gradient with respect to `Z`. At a zero residual the
/// gradient is taken as zero.
pub fn frobenius_loss_grad(z: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    let r = z.sub(y)?;
    let norm = r.frobenius();
    if norm == 0.0 {
        return Ok((0.0, Matrix::zeros(r.rows(), r.cols())));
    }
    Ok((norm, r.scale(1.0 / norm)))
}

/// `½‖Z − Y‖_F²` and its gradient `Z − Y`.
pub fn half_squared_loss_grad(z: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    let r = z.sub(y)?;
    let f = r.frobenius();
    Ok((0.5 * f * f, r))
}

/// Plain regression with a single linear head: trains on `½‖H·W − Y‖²`,
/// reports `‖H·W − Y‖_F`.
pub struct SquaredNormLoss {
    pub y: Matrix,
}

impl HeadObjective for SquaredNormLoss {
    fn head_shapes(&self, input_dim: usize) -> Vec<(usize, usize)> {
        vec![(input_dim, self.y.cols())]
    }

    fn loss_and_head_grad(&self, h: &Matrix, head: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let z = h.matmul(&head[0])?;
        let (loss, dz) = half_squared_loss_grad(&z, &self.y)?;
        Ok((loss, vec![h.t_matmul(&dz)?]))
    }

    fn loss(&self, h: &Matrix, head: &[Matrix]) -> Result<f64> {
        Ok(h.matmul(&head[0])?.sub(&self.y)?.frobenius())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_target_is_learned() {
        let h = Matrix::identity(4);
        let obj = SquaredNormLoss { y: h.clone() };
        let fit = linear_head_fit(
            &h,
            &obj,
            &OptimizerConfig::adam(0.01, 0.0, 500),
            &mut Rng::new(0),
        )
        .unwrap();
        assert!(fit.final_loss < 1e-4, "loss {}", fit.final_loss);
        assert!(fit.w().max_abs_diff(&Matrix::identity(4)) < 1e-2);
    }

    #[test]
    fn zero_input_cannot_change_prediction() {
        let h = Matrix::zeros(5, 3);
        let y = Matrix::from_fn(5, 2, |r, c| (r + c) as f64 - 2.0);
        let obj = SquaredNormLoss { y: y.clone() };
        let fit = linear_head_fit(
            &h,
            &obj,
            &OptimizerConfig::adam(0.05, 0.0, 50),
            &mut Rng::new(3),
        )
        .unwrap();
        assert_eq!(fit.final_loss, y.frobenius());
    }

    #[test]
    fn divergence_names_epoch() {
        let h = Matrix::filled(3, 2, 1e7);
        let obj = SquaredNormLoss {
            y: Matrix::zeros(3, 1),
        };
        let err = linear_head_fit(&h, &obj, &OptimizerConfig::sgd(1e9, 20), &mut Rng::new(1))
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
