//! Downstream evaluation: linear-probe node classification, link-prediction
//! ROC-AUC, and the combination baselines.

mod baselines;

use serde::{Deserialize, Serialize};

pub use baselines::{baseline_addition, baseline_concat, baseline_multiloss, MULTILOSS_TASK};

use crate::error::{Error, Result};
use crate::graph::{FrozenArtifacts, NodeSplits};
use crate::numeric::{check_divergence, sigmoid, Matrix, Optimizer, OptimizerConfig, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
        }
    }
}

/// Mean and population standard deviation of a metric over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub metric: Metric,
    pub value: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub per_seed: Vec<f64>,
}

impl ProbeResult {
    pub fn from_seeds(metric: Metric, per_seed: Vec<f64>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::Parameter(
                "probe result needs at least one seed".into(),
            ));
        }
        let n = per_seed.len() as f64;
        let value = per_seed.iter().sum::<f64>() / n;
        let std = (per_seed.iter().map(|v| (v - value).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            metric,
            value,
            std,
            n_seeds: per_seed.len(),
            per_seed,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    let hits = nodes
        .iter()
        .filter(|&&v| argmax(logits.row(v)) == labels[v])
        .count();
    hits as f64 / nodes.len() as f64
}

/// Test accuracy of a softmax-regression probe (weights plus bias) trained
/// on the training nodes of a frozen representation, taken at the epoch with
/// the best validation accuracy (earliest on ties).
pub fn linear_probe_nodeclass(
    h: &Matrix,
    labels: &[usize],
    splits: &NodeSplits,
    opts: &OptimizerConfig,
    rng: &Rng,
) -> Result<f64> {
    opts.validate()?;
    if labels.len() != h.rows() {
        return Err(Error::dims("probe labels", h.rows(), labels.len()));
    }
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::Parameter(
            "node classification needs non-empty train/val/test splits".into(),
        ));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let d = h.cols();
    let bound = 0.01 / (d.max(1) as f64).sqrt();
    let mut params = vec![
        rng.clone().uniform_matrix(d, classes, -bound, bound),
        Matrix::zeros(1, classes),
    ];
    let mut opt = Optimizer::new(opts, &params);
    let x_train = h.select_rows(&splits.train);
    let n_train = splits.train.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for epoch in 1..=opts.epochs {
        let mut logits = h.matmul(&params[0])?;
        logits.add_row_vector(params[1].data());
        let val_acc = accuracy(&logits, labels, &splits.val);
        if val_acc > best.0 {
            best = (val_acc, accuracy(&logits, labels, &splits.test));
        }
        let mut d_logits = Matrix::zeros(splits.train.len(), classes);
        let mut loss = 0.0;
        for (r, &v) in splits.train.iter().enumerate() {
            let row = logits.row(v);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
            loss -= (row[labels[v]] - m) - z.ln();
            for c in 0..classes {
                let p = (row[c] - m).exp() / z;
                d_logits[(r, c)] = (p - (c == labels[v]) as u8 as f64) / n_train;
            }
        }
        check_divergence(loss / n_train, epoch)?;
        let grads = [
            x_train.t_matmul(&d_logits)?,
            Matrix::row_vector(&d_logits.column_sums()),
        ];
        opt.step(&mut params, &grads, &[false, false]);
    }
    Ok(best.1)
}

/// ROC-AUC by the rank-sum statistic with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dims("auc inputs", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Parameter(
            "ROC-AUC needs both positive and negative pairs".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// ROC-AUC by counting concordant positive/negative pairs (ties count half).
pub fn auc_pair_count(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            total += match scores[i].total_cmp(&scores[j]) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    if pairs == 0 {
        return Err(Error::Parameter(
            "ROC-AUC needs both positive and negative pairs".into(),
        ));
    }
    Ok(total / pairs as f64)
}

fn pair_features(h: &Matrix, pairs: &[(usize, usize)]) -> Matrix {
    Matrix::from_fn(pairs.len(), h.cols(), |r, c| {
        let (u, v) = pairs[r];
        h[(u, c)] * h[(v, c)]
    })
}

/// ROC-AUC of a logistic head on `z_u ∘ z_v` features. The frozen masked
/// edges (positives) and their negatives are each split 50/50 by `rng`; the
/// head is trained on one half and scored on the other.
pub fn link_predict_auc(
    h: &Matrix,
    art: &FrozenArtifacts,
    opts: &OptimizerConfig,
    rng: &Rng,
) -> Result<f64> {
    opts.validate()?;
    let mut r = rng.clone();
    let mut pos = art.masked_edges.clone();
    let mut neg = art.negative_edges.clone();
    r.shuffle(&mut pos);
    r.shuffle(&mut neg);
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::Parameter(
            "link prediction needs at least two positive and two negative pairs".into(),
        ));
    }
    let (pos_train, pos_test) = pos.split_at(pos.len() / 2);
    let (neg_train, neg_test) = neg.split_at(neg.len() / 2);
    let train: Vec<(usize, usize)> = pos_train.iter().chain(neg_train).copied().collect();
    let y: Vec<f64> = (0..train.len())
        .map(|i| (i < pos_train.len()) as u8 as f64)
        .collect();
    let x = pair_features(h, &train);
    let d = h.cols();
    let bound = 0.01 / (d.max(1) as f64).sqrt();
    let mut params = vec![r.uniform_matrix(d, 1, -bound, bound), Matrix::zeros(1, 1)];
    let mut opt = Optimizer::new(opts, &params);
    let n = train.len() as f64;
    for epoch in 1..=opts.epochs {
        let z = x.matmul(&params[0])?;
        let b = params[1][(0, 0)];
        let mut dz = Matrix::zeros(train.len(), 1);
        let mut loss = 0.0;
        for i in 0..train.len() {
            let p = sigmoid(z[(i, 0)] + b).clamp(1e-12, 1.0 - 1e-12);
            loss -= y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln();
            dz[(i, 0)] = (p - y[i]) / n;
        }
        check_divergence(loss / n, epoch)?;
        let grads = [x.t_matmul(&dz)?, Matrix::filled(1, 1, dz.sum())];
        opt.step(&mut params, &grads, &[false, false]);
    }
    let test: Vec<(usize, usize)> = pos_test.iter().chain(neg_test).copied().collect();
    let labels: Vec<bool> = (0..test.len()).map(|i| i < pos_test.len()).collect();
    let scores = pair_features(h, &test).matmul(&params[0])?;
    roc_auc(scores.data(), &labels)
}

/// One row of the downstream results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

impl ResultRow {
    pub fn new(method: &str, dataset: &str, r: &ProbeResult) -> Self {
        Self {
            method: method.to_string(),
            dataset: dataset.to_string(),
            metric: r.metric,
            mean: r.value,
            std: r.std,
            n_seeds: r.n_seeds,
        }
    }
}

pub fn write_results_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "dataset", "metric", "mean", "std", "n_seeds"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.metric.as_str().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.n_seeds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("results csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_extremes() {
        let labels = [true, false, true, false];
        let perfect: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
        assert_eq!(roc_auc(&perfect, &labels).unwrap(), 1.0);
        let inverted: Vec<f64> = perfect.iter().map(|v| 1.0 - v).collect();
        assert_eq!(roc_auc(&inverted, &labels).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn auc_matches_pair_count_with_ties() {
        let scores = [0.1, 0.4, 0.4, 0.8, 0.4, 0.2];
        let labels = [false, true, false, true, true, false];
        assert_eq!(
            roc_auc(&scores, &labels).unwrap(),
            auc_pair_count(&scores, &labels).unwrap()
        );
    }

    #[test]
    fn probe_result_stats() {
        let r = ProbeResult::from_seeds(Metric::Accuracy, vec![0.5, 0.7]).unwrap();
        assert!((r.value - 0.6).abs() < 1e-15);
        assert!((r.std - 0.1).abs() < 1e-12);
        assert!(ProbeResult::from_seeds(Metric::Accuracy, vec![]).is_err());
    }
}
