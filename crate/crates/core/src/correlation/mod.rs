//! Correlation values between tasks, the k×k matrix, ATD/ARL statistics and
//! the closed-form bound verifiers.

mod bounds;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bounds::{verify_thm34, verify_thm35, BoundReport, BOUND_SLACK};

use crate::error::{Error, Result};
use crate::numeric::{linear_head_fit, Matrix, OptimizerConfig, Rng};
use crate::tasks::LossEvaluator;

/// Head-fitting protocol shared by every numerator and denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    #[serde(default = "OptimizerConfig::probe_default")]
    pub optimizer: OptimizerConfig,
    /// Floor applied to denominators.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-9
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::probe_default(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrValue {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// The denominator fell below epsilon and was floored.
    pub degenerate: bool,
}

/// Loss reached by a linear head fit on `h` under `ev`, with head
/// initialization drawn from `head_seed`.
pub fn fitted_loss(
    h: &Matrix,
    ev: &LossEvaluator,
    opts: &OptimizerConfig,
    head_seed: u64,
) -> Result<f64> {
    Ok(linear_head_fit(h, ev, opts, &mut Rng::new(head_seed))?.final_loss)
}

fn ratio(numerator: f64, denominator: f64, eps: f64) -> CorrValue {
    let degenerate = denominator < eps;
    if degenerate {
        log::warn!("denominator {denominator:e} below {eps:e}; floored");
    }
    CorrValue {
        value: numerator / denominator.max(eps),
        numerator,
        denominator,
        degenerate,
    }
}

/// `Cor(t1, t2)`: loss of `h1` on `ev2` relative to the loss of `h2` (the
/// representation trained on `t2`). Both heads start from the same seed.
pub fn correlation_value(
    h1: &Matrix,
    h2: &Matrix,
    ev2: &LossEvaluator,
    cfg: &CorrelationConfig,
    rng: &Rng,
) -> Result<CorrValue> {
    if h1.rows() != h2.rows() {
        return Err(Error::dims(
            "correlation representations",
            h2.rows(),
            h1.rows(),
        ));
    }
    let seed = rng.seed();
    let num = fitted_loss(h1, ev2, &cfg.optimizer, seed)?;
    let den = fitted_loss(h2, ev2, &cfg.optimizer, seed)?;
    Ok(ratio(num, den, cfg.epsilon))
}

/// k×k matrix with `values[(i, j)] = Cor(t_i, t_j)`: rows are the training
/// task, columns the evaluated task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub tasks: Vec<String>,
    #[serde(with = "square")]
    pub values: Matrix,
    pub denominators: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub config: MatrixConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub correlation: CorrelationConfig,
    pub seed: u64,
    /// Head seed for every fit in column `j`.
    pub column_seeds: Vec<u64>,
}

mod square {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numeric::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        m.data().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        let k = (data.len() as f64).sqrt().round() as usize;
        Matrix::from_vec(k, k, data).map_err(serde::de::Error::custom)
    }
}

/// Builds the full matrix. Each column's denominator is fitted once and
/// reused; the diagonal is that same fit, so it is exactly 1.
pub fn correlation_matrix(
    reps: &[&Matrix],
    evals: &[&LossEvaluator],
    cfg: &CorrelationConfig,
    rng: &Rng,
) -> Result<CorrelationMatrix> {
    let k = reps.len();
    if k == 0 || evals.len() != k {
        return Err(Error::dims(
            "correlation task count",
            reps.len(),
            evals.len(),
        ));
    }
    let n = reps[0].rows();
    if let Some(r) = reps.iter().find(|r| r.rows() != n) {
        return Err(Error::dims("correlation representations", n, r.rows()));
    }
    let column_seeds: Vec<u64> = (0..k).map(|j| rng.split(j as u64).seed()).collect();
    let denominators = (0..k)
        .into_par_iter()
        .map(|j| fitted_loss(reps[j], evals[j], &cfg.optimizer, column_seeds[j]))
        .collect::<Result<Vec<f64>>>()?;
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .collect();
    let numerators = pairs
        .par_iter()
        .map(|&(i, j)| fitted_loss(reps[i], evals[j], &cfg.optimizer, column_seeds[j]))
        .collect::<Result<Vec<f64>>>()?;

    let mut values = Matrix::zeros(k, k);
    let mut degenerate = vec![false; k];
    for j in 0..k {
        let c = ratio(denominators[j], denominators[j], cfg.epsilon);
        values[(j, j)] = c.value;
        degenerate[j] = c.degenerate;
    }
    for (&(i, j), &num) in pairs.iter().zip(&numerators) {
        values[(i, j)] = ratio(num, denominators[j], cfg.epsilon).value;
    }
    Ok(CorrelationMatrix {
        tasks: evals.iter().map(|e| e.id().to_string()).collect(),
        values,
        denominators,
        degenerate,
        config: MatrixConfig {
            correlation: cfg.clone(),
            seed: rng.seed(),
            column_seeds,
        },
    })
}

impl CorrelationMatrix {
    pub fn k(&self) -> usize {
        self.tasks.len()
    }

    /// Recomputes entry `(i, j)` from scratch with the stored seeds.
    pub fn recompute_entry(
        &self,
        reps: &[&Matrix],
        evals: &[&LossEvaluator],
        i: usize,
        j: usize,
    ) -> Result<f64> {
        let opts = &self.config.correlation.optimizer;
        let seed = self.config.column_seeds[j];
        let num = fitted_loss(reps[i], evals[j], opts, seed)?;
        let den = fitted_loss(reps[j], evals[j], opts, seed)?;
        Ok(ratio(num, den, self.config.correlation.epsilon).value)
    }

    /// `Cor(h, t_j)` for every column, reusing the stored denominators and
    /// column seeds.
    pub fn extra_row(&self, h: &Matrix, evals: &[&LossEvaluator]) -> Result<Vec<f64>> {
        if evals.len() != self.k() {
            return Err(Error::dims("evaluator count", self.k(), evals.len()));
        }
        let opts = &self.config.correlation.optimizer;
        let eps = self.config.correlation.epsilon;
        (0..self.k())
            .into_par_iter()
            .map(|j| {
                let num = fitted_loss(h, evals[j], opts, self.config.column_seeds[j])?;
                Ok(ratio(num, self.denominators[j], eps).value)
            })
            .collect()
    }

    pub fn stats(&self) -> Result<TaskStats> {
        task_stats(&self.values)
    }

    /// Heatmap CSV: header row and first column carry the task ids.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["train\\eval".to_string()];
        header.extend(self.tasks.iter().cloned());
        w.write_record(&header)?;
        for (i, t) in self.tasks.iter().enumerate() {
            let mut row = vec![t.clone()];
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

/// Mean of column `i` off the diagonal.
pub fn atd(values: &Matrix, i: usize) -> Result<f64> {
    let k = values.rows();
    if k < 2 {
        return Err(Error::UndefinedStatistic("ATD"));
    }
    let s: f64 = (0..k).filter(|&j| j != i).map(|j| values[(j, i)]).sum();
    Ok(s / (k - 1) as f64)
}

/// `(ATD_i + Σ_{j≠i} values[(i, j)]) / k`.
pub fn arl(values: &Matrix, i: usize) -> Result<f64> {
    let k = values.rows();
    let row: f64 = (0..k).filter(|&j| j != i).map(|j| values[(i, j)]).sum();
    Ok((atd(values, i)? + row) / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub atd: Vec<f64>,
    pub arl: Vec<f64>,
    /// 1 = hardest task (largest ATD).
    pub atd_rank: Vec<usize>,
    /// 1 = most capable representation (smallest ARL).
    pub arl_rank: Vec<usize>,
}

pub fn task_stats(values: &Matrix) -> Result<TaskStats> {
    let k = values.rows();
    let atd_v = (0..k).map(|i| atd(values, i)).collect::<Result<Vec<_>>>()?;
    let arl_v = (0..k).map(|i| arl(values, i)).collect::<Result<Vec<_>>>()?;
    Ok(TaskStats {
        atd_rank: rank(&atd_v, true),
        arl_rank: rank(&arl_v, false),
        atd: atd_v,
        arl: arl_v,
    })
}

/// Competition-free ranks starting at 1; ties keep task order.
pub fn rank(values: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        (if descending { c.reverse() } else { c }).then(a.cmp(&b))
    });
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m3() -> Matrix {
        Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 1.0, 6.0], [7.0, 8.0, 1.0]]).unwrap()
    }

    #[test]
    fn atd_arl_worked_example() {
        assert_eq!(atd(&m3(), 0).unwrap(), 5.5);
        assert_eq!(arl(&m3(), 0).unwrap(), 3.5);
        let two = Matrix::from_rows(&[[1.0, 0.3], [0.7, 1.0]]).unwrap();
        assert_eq!(atd(&two, 0).unwrap(), 0.7);
        assert!((arl(&two, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            atd(&Matrix::identity(1), 0),
            Err(Error::UndefinedStatistic(_))
        ));
    }

    #[test]
    fn uniform_matrix_ties_by_order() {
        let s = task_stats(&Matrix::filled(3, 3, 1.0)).unwrap();
        assert_eq!(s.atd, vec![1.0; 3]);
        assert_eq!(s.arl, vec![1.0; 3]);
        assert_eq!(s.atd_rank, vec![1, 2, 3]);
        assert_eq!(s.arl_rank, vec![1, 2, 3]);
    }

    #[test]
    fn ranks_follow_direction() {
        assert_eq!(rank(&[0.5, 2.0, 1.0], true), vec![3, 1, 2]);
        assert_eq!(rank(&[0.5, 2.0, 1.0], false), vec![1, 3, 2]);
    }

    #[test]
    fn degenerate_denominator_is_flagged() {
        let c = ratio(1e-3, 0.0, 1e-9);
        assert!(c.degenerate);
        assert_eq!(c.value, 1e-3 / 1e-9);
    }
}
