use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/val/test partition, stratified by class when labels exist.
///
/// Split sizes are `round(fraction · N)` (capped so they never exceed N).
/// Stratification orders nodes by their relative position inside a shuffled
/// class list, so every prefix of the ordering is close to class-proportional.
pub fn split_nodes(g: &Graph, fractions: (f64, f64, f64), rng: &mut Rng) -> Result<NodeSplits> {
    let (ftr, fva, fte) = fractions;
    if ftr < 0.0 || fva < 0.0 || fte < 0.0 || ftr + fva + fte > 1.0 + 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must be nonnegative and sum to <= 1, got {fractions:?}"
        )));
    }
    let n = g.n_nodes();
    let n_train = ((ftr * n as f64).round() as usize).min(n);
    let n_val = ((fva * n as f64).round() as usize).min(n - n_train);
    let n_test = ((fte * n as f64).round() as usize).min(n - n_train - n_val);
    let slots = [n_train, n_val, n_test].iter().filter(|&&s| s > 0).count();

    let mut order: Vec<usize> = Vec::with_capacity(n);
    let stratified = match g.labels() {
        Some(labels) => {
            let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                classes.entry(c).or_default().push(i);
            }
            if classes.values().any(|m| m.len() < slots) {
                log::warn!(
                    "a class has fewer members than the {slots} non-empty splits; \
                     falling back to an unstratified split"
                );
                false
            } else {
                let mut keyed: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
                for members in classes.values_mut() {
                    rng.shuffle(members);
                    let size = members.len() as f64;
                    for (rank, &node) in members.iter().enumerate() {
                        keyed.push(((rank as f64 + 0.5) / size, rng.uniform(), node));
                    }
                }
                keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                order.extend(keyed.into_iter().map(|k| k.2));
                true
            }
        }
        None => false,
    };
    if !stratified {
        order = rng.permutation(n);
    }
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..n_train + n_val + n_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    fn labeled(n: usize, classes: usize) -> Graph {
        Graph::new(
            "t",
            n,
            std::iter::empty(),
            Matrix::zeros(n, 1),
            Some((0..n).map(|i| i % classes).collect()),
        )
        .unwrap()
    }

    #[test]
    fn exact_sizes_and_disjoint() {
        let g = labeled(100, 4);
        let s = split_nodes(&g, (0.1, 0.1, 0.8), &mut Rng::new(3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 10, 80));
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn degenerate_all_train() {
        let g = labeled(17, 3);
        let s = split_nodes(&g, (1.0, 0.0, 0.0), &mut Rng::new(0)).unwrap();
        assert_eq!(s.train, (0..17).collect::<Vec<_>>());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn deterministic_and_stratified() {
        let g = labeled(40, 4);
        let a = split_nodes(&g, (0.5, 0.25, 0.25), &mut Rng::new(9)).unwrap();
        let b = split_nodes(&g, (0.5, 0.25, 0.25), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let labels = g.labels().unwrap();
        for c in 0..4 {
            let count = a.train.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!(count, 5);
        }
    }

    #[test]
    fn rejects_oversized_fractions() {
        let g = labeled(10, 2);
        assert!(split_nodes(&g, (0.6, 0.6, 0.0), &mut Rng::new(0)).is_err());
    }
}
