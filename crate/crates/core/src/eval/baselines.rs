use crate::encoder::{train_joint, EncoderArch, Representation};
use crate::error::{Error, Result};
use crate::graph::{FrozenArtifacts, Graph};
use crate::numeric::{Matrix, OptimizerConfig, Rng};
use crate::tasks::LossEvaluator;

pub const MULTILOSS_TASK: &str = "multiloss";

fn tagged(task: &str, like: &Representation, matrix: Matrix) -> Representation {
    Representation {
        task: task.to_string(),
        seed: like.seed,
        dataset: like.dataset.clone(),
        matrix,
    }
}

/// Elementwise sum of equally shaped representations.
pub fn baseline_addition(reps: &[&Representation]) -> Result<Representation> {
    let first = reps.first().ok_or(Error::Parameter(
        "addition needs at least one representation".into(),
    ))?;
    let mut sum = first.matrix.clone();
    for r in &reps[1..] {
        sum.add_assign(&r.matrix)?;
    }
    Ok(tagged("addition", first, sum))
}

/// Column concatenation in input order.
pub fn baseline_concat(reps: &[&Representation]) -> Result<Representation> {
    let first = reps.first().ok_or(Error::Parameter(
        "concat needs at least one representation".into(),
    ))?;
    let mut out = first.matrix.clone();
    for r in &reps[1..] {
        out = Matrix::hcat(&[&out, &r.matrix])?;
    }
    Ok(tagged("concat", first, out))
}

/// One shared encoder trained on a softmax-weighted sum of task losses with
/// learnable weights. Returns the representation and the final weights.
pub fn baseline_multiloss(
    evals: &[&LossEvaluator],
    g: &Graph,
    art: &FrozenArtifacts,
    arch: &EncoderArch,
    opts: &OptimizerConfig,
    rng: &Rng,
) -> Result<(Representation, Vec<f64>)> {
    let out = train_joint(evals, g, art, arch, opts, true, rng)?;
    let rep = Representation {
        task: MULTILOSS_TASK.to_string(),
        seed: rng.seed(),
        dataset: g.name.clone(),
        matrix: out.embedding,
    };
    Ok((rep, out.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(m: Matrix) -> Representation {
        Representation {
            task: "x".into(),
            seed: 0,
            dataset: "d".into(),
            matrix: m,
        }
    }

    #[test]
    fn addition_cancels_and_commutes() {
        let a = rep(Rng::new(1).normal_matrix(4, 3));
        let b = rep(a.matrix.scale(-1.0));
        assert_eq!(
            baseline_addition(&[&a, &b]).unwrap().matrix,
            Matrix::zeros(4, 3)
        );
        let c = rep(Rng::new(2).normal_matrix(4, 3));
        assert_eq!(
            baseline_addition(&[&a, &c]).unwrap().matrix,
            baseline_addition(&[&c, &a]).unwrap().matrix
        );
        assert_eq!(baseline_addition(&[&a]).unwrap().matrix, a.matrix);
    }

    #[test]
    fn concat_layout() {
        let a = rep(Rng::new(1).normal_matrix(4, 3));
        let b = rep(Rng::new(2).normal_matrix(4, 5));
        let c = baseline_concat(&[&a, &b]).unwrap();
        assert_eq!(c.matrix.cols(), 8);
        assert_eq!(c.matrix.slice_cols(0, 3).unwrap(), a.matrix);
        assert_eq!(c.matrix.slice_cols(3, 8).unwrap(), b.matrix);
        assert_eq!(c.task, "concat");
    }
}
