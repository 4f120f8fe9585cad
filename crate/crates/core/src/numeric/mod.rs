//! Dense numeric kernel shared by every other module: matrices, seeded
//! randomness, optimizers, closed-form solvers, PCA and readout pooling.

mod head;
mod linalg;
mod matrix;
mod optim;
mod rng;

pub use head::{
    frobenius_loss_grad, half_squared_loss_grad, linear_head_fit, HeadFit, HeadObjective,
    SquaredNormLoss,
};
pub use linalg::{
    canonicalize_signs, center_columns, cholesky_solve, least_squares_closed, pca_project, readout,
    readout_backward, symmetric_eigen, LstsqSolution, Pca, ReadoutKind,
};
pub use matrix::{dot, Matrix};
pub use optim::{check_divergence, Optimizer, OptimizerConfig, OptimizerKind, DIVERGENCE_LIMIT};
pub use rng::{child_seed, Rng};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column-wise z-score with population standard deviation. Constant columns
/// map to zero.
pub fn zscore_columns(m: &Matrix) -> Matrix {
    let (n, d) = m.shape();
    let means = m.column_means();
    let mut out = m.clone();
    for c in 0..d {
        let var = (0..n).map(|r| (m[(r, c)] - means[c]).powi(2)).sum::<f64>() / n.max(1) as f64;
        let sd = var.sqrt();
        for r in 0..n {
            out[(r, c)] = if sd > 1e-12 {
                (m[(r, c)] - means[c]) / sd
            } else {
                0.0
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_properties() {
        let m = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [1.0, 5.0]]).unwrap();
        let z = zscore_columns(&m);
        let col = z.column(0);
        let mean: f64 = col.iter().sum::<f64>() / 3.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
        assert_eq!(z.column(1), vec![0.0; 3]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
