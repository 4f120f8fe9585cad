//! Closed-form least squares, symmetric eigendecomposition, PCA and readouts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Relative pivot threshold below which the normal matrix counts as singular.
const PIVOT_TOL: f64 = 1e-12;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::dims(
            "cholesky_solve",
            format!("square {n}x{n} system"),
            format!("{:?} / rhs {:?}", a.shape(), b.shape()),
        ));
    }
    let scale = (0..n)
        .map(|i| a[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let chol = to_na(a).cholesky().ok_or(Error::Singular { pivot: 0.0 })?;
    let pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if pivot <= PIVOT_TOL * scale {
        return Err(Error::Singular { pivot });
    }
    Ok(from_na(&chol.solve(&to_na(b))))
}

#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub w: Matrix,
    /// `‖H·W − Y‖_F` (not squared).
    pub residual: f64,
}

/// Minimizes `‖HW − Y‖²_F + ridge·‖W‖²_F` through the normal equations.
pub fn least_squares_closed(h: &Matrix, y: &Matrix, ridge: f64) -> Result<LstsqSolution> {
    if ridge.is_nan() || ridge < 0.0 {
        return Err(Error::Parameter(format!("ridge must be >= 0, got {ridge}")));
    }
    if h.rows() != y.rows() {
        return Err(Error::dims("least_squares_closed", h.rows(), y.rows()));
    }
    let mut gram = h.t_matmul(h)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += ridge;
    }
    let rhs = h.t_matmul(y)?;
    let w = cholesky_solve(&gram, &rhs)?;
    let residual = h.matmul(&w)?.sub(y)?.frobenius();
    Ok(LstsqSolution { w, residual })
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
/// Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims(
            "symmetric_eigen",
            "square matrix",
            format!("{:?}", a.shape()),
        ));
    }
    let eig = to_na(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Flips each column so its first entry with magnitude above `tol` is positive.
pub fn canonicalize_signs(vectors: &mut Matrix, tol: f64) {
    for c in 0..vectors.cols() {
        let first = (0..vectors.rows())
            .map(|r| vectors[(r, c)])
            .find(|v| v.abs() > tol);
        if matches!(first, Some(v) if v < 0.0) {
            for r in 0..vectors.rows() {
                vectors[(r, c)] = -vectors[(r, c)];
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `F × rank`, orthonormal columns.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Matrix, rank: usize) -> Result<Pca> {
        let (n, f) = x.shape();
        if rank < 1 || rank > n.min(f) {
            return Err(Error::Parameter(format!(
                "pca rank must lie in [1, {}], got {rank}",
                n.min(f)
            )));
        }
        let centered = center_columns(x);
        let cov = centered.t_matmul(&centered)?.scale(1.0 / n as f64);
        let (values, mut vectors) = symmetric_eigen(&cov)?;
        canonicalize_signs(&mut vectors, 1e-12);
        Ok(Pca {
            mean: x.column_means(),
            components: vectors.slice_cols(0, rank)?,
            explained_variance: values[..rank].to_vec(),
        })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let mut centered = x.clone();
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        centered.add_row_vector(&neg);
        centered.matmul(&self.components)
    }
}

pub fn center_columns(x: &Matrix) -> Matrix {
    let neg: Vec<f64> = x.column_means().into_iter().map(|m| -m).collect();
    let mut out = x.clone();
    out.add_row_vector(&neg);
    out
}

/// Centers `x` and projects it on its top-`rank` principal directions.
pub fn pca_project(x: &Matrix, rank: usize) -> Result<Matrix> {
    Pca::fit(x, rank)?.transform(x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    #[default]
    Mean,
    Sum,
    Max,
}

/// Column-wise pooling of an `N × d` matrix into a length-`d` vector.
pub fn readout(h: &Matrix, kind: ReadoutKind) -> Vec<f64> {
    match kind {
        ReadoutKind::Mean => h.column_means(),
        ReadoutKind::Sum => h.column_sums(),
        ReadoutKind::Max => (0..h.cols())
            .map(|c| {
                (0..h.rows())
                    .map(|r| h[(r, c)])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect(),
    }
}

/// Gradient of `readout(h)` pulled back to `h` given the upstream gradient.
pub fn readout_backward(h: &Matrix, kind: ReadoutKind, upstream: &[f64]) -> Matrix {
    let (n, d) = h.shape();
    match kind {
        ReadoutKind::Mean => Matrix::from_fn(n, d, |_, c| upstream[c] / n as f64),
        ReadoutKind::Sum => Matrix::from_fn(n, d, |_, c| upstream[c]),
        ReadoutKind::Max => {
            let mut g = Matrix::zeros(n, d);
            for c in 0..d {
                // first arg-max row receives the gradient
                let mut best = 0;
                for r in 1..n {
                    if h[(r, c)] > h[(best, c)] {
                        best = r;
                    }
                }
                g[(best, c)] = upstream[c];
            }
            g
        }
    }
}
