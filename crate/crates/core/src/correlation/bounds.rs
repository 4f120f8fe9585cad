//! Closed-form checks of the downstream-error bounds implied by correlation
//! values under norm-form regression losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{least_squares_closed, Matrix};

pub const BOUND_SLACK: f64 = 1e-9;

const DEN_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Downstream error of the representation being bounded.
    pub lhs: f64,
    pub rhs: f64,
    pub cor: f64,
    /// Target gap plus head disagreement of the reference representation.
    pub delta: f64,
    /// Largest `delta` across reference tasks.
    pub beta: f64,
    /// Largest correlation value across reference tasks.
    pub delta_bound: f64,
    /// Smallest downstream error across reference representations.
    pub e_min: f64,
    pub holds: bool,
}

struct Reference {
    cor: f64,
    e_ref: f64,
    delta: f64,
}

/// Quantities for bounding `h_new` through reference `(h_ref, y_ref)`.
fn reference(
    h_new: &Matrix,
    h_ref: &Matrix,
    y_ref: &Matrix,
    y_ds: &Matrix,
    ridge: f64,
) -> Result<Reference> {
    let new_on_ref = least_squares_closed(h_new, y_ref, ridge)?;
    let own = least_squares_closed(h_ref, y_ref, ridge)?;
    let ref_on_ds = least_squares_closed(h_ref, y_ds, ridge)?;
    let cor = new_on_ref.residual / own.residual.max(DEN_FLOOR);
    let head_gap = h_ref.matmul(&ref_on_ds.w.sub(&own.w)?)?.frobenius();
    Ok(Reference {
        cor,
        e_ref: ref_on_ds.residual,
        delta: y_ref.sub(y_ds)?.frobenius() + head_gap,
    })
}

fn check_shapes(h: &Matrix, y: &Matrix, y_ds: &Matrix) -> Result<()> {
    if h.rows() != y.rows() || y.shape() != y_ds.shape() {
        return Err(Error::dims(
            "bound instance",
            format!("{} rows, target {:?}", h.rows(), y_ds.shape()),
            format!("{} rows, target {:?}", y.rows(), y.shape()),
        ));
    }
    Ok(())
}

/// `e₁ ≤ Cor(t₁,t₂)·(e₂ + Δ) + ‖Y₂ − Y_ds‖` with every head solved in
/// closed form.
pub fn verify_thm34(
    h1: &Matrix,
    h2: &Matrix,
    y2: &Matrix,
    y_ds: &Matrix,
    ridge: f64,
) -> Result<BoundReport> {
    check_shapes(h1, y2, y_ds)?;
    check_shapes(h2, y2, y_ds)?;
    let r = reference(h1, h2, y2, y_ds, ridge)?;
    let lhs = least_squares_closed(h1, y_ds, ridge)?.residual;
    let gap = y2.sub(y_ds)?.frobenius();
    let rhs = r.cor * (r.e_ref + r.delta) + gap;
    Ok(BoundReport {
        lhs,
        rhs,
        cor: r.cor,
        delta: r.delta,
        beta: r.delta,
        delta_bound: r.cor,
        e_min: r.e_ref,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

/// `e' ≤ δ·(e_min + β) + β` over a set of reference tasks.
pub fn verify_thm35(
    reps: &[&Matrix],
    targets: &[&Matrix],
    y_ds: &Matrix,
    h_new: &Matrix,
    ridge: f64,
) -> Result<BoundReport> {
    if reps.is_empty() || reps.len() != targets.len() {
        return Err(Error::dims("bound task count", reps.len(), targets.len()));
    }
    let mut beta = f64::NEG_INFINITY;
    let mut delta_bound = f64::NEG_INFINITY;
    let mut e_min = f64::INFINITY;
    for (h, y) in reps.iter().zip(targets) {
        check_shapes(h, y, y_ds)?;
        let r = reference(h_new, h, y, y_ds, ridge)?;
        beta = beta.max(r.delta);
        delta_bound = delta_bound.max(r.cor);
        e_min = e_min.min(r.e_ref);
    }
    let lhs = least_squares_closed(h_new, y_ds, ridge)?.residual;
    let rhs = delta_bound * (e_min + beta) + beta;
    Ok(BoundReport {
        lhs,
        rhs,
        cor: delta_bound,
        delta: beta,
        beta,
        delta_bound,
        e_min,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    #[test]
    fn equal_targets_give_equality() {
        let mut rng = Rng::new(5);
        let h1 = rng.normal_matrix(12, 4);
        let h2 = rng.normal_matrix(12, 4);
        let y = rng.normal_matrix(12, 2);
        let r = verify_thm34(&h1, &h2, &y, &y, 0.0).unwrap();
        assert!(r.delta < 1e-12);
        assert!((r.lhs - r.rhs).abs() < 1e-9 * r.lhs.max(1.0));
        assert!(r.holds);
    }

    #[test]
    fn same_representation_has_unit_cor() {
        let mut rng = Rng::new(6);
        let h = rng.normal_matrix(10, 3);
        let (y2, yds) = (rng.normal_matrix(10, 2), rng.normal_matrix(10, 2));
        let r = verify_thm34(&h, &h, &y2, &yds, 0.0).unwrap();
        assert!((r.cor - 1.0).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn single_task_matches_pairwise_bound() {
        let mut rng = Rng::new(7);
        let (h, hn) = (rng.normal_matrix(9, 3), rng.normal_matrix(9, 3));
        let (y, yds) = (rng.normal_matrix(9, 2), rng.normal_matrix(9, 2));
        let a = verify_thm34(&hn, &h, &y, &yds, 0.0).unwrap();
        let b = verify_thm35(&[&h], &[&y], &yds, &hn, 0.0).unwrap();
        assert!((a.lhs - b.lhs).abs() < 1e-12);
        // β = Δ and δ = Cor, so the set bound adds one extra β·(δ) ≥ 0 slack
        assert!(b.rhs >= a.rhs - 1e-12);
        assert!(b.holds);
    }
}
