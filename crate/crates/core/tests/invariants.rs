use proptest::prelude::*;

use taskcorr::correlation::{rank, task_stats, verify_thm34};
use taskcorr::encoder::Representation;
use taskcorr::eval::{auc_pair_count, baseline_addition, baseline_concat, roc_auc};
use taskcorr::graph::{split_nodes, synth_sbm, SbmParams};
use taskcorr::numeric::{Matrix, Rng};
use taskcorr::tcm::{mix, MixWeights};

fn rep(m: Matrix) -> Representation {
    Representation {
        task: "t".into(),
        seed: 0,
        dataset: "d".into(),
        matrix: m,
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((-4i32..4).prop_map(|s| s as f64 * 0.5), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn auc_agrees_with_pair_counting((scores, mut labels) in scored_labels()) {
        labels[0] = true;
        labels[1] = false;
        let fast = roc_auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&fast));
        prop_assert!((fast - auc_pair_count(&scores, &labels).unwrap()).abs() < 1e-12);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((fast + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_blocks_slice_back_out(a in matrix(5, 3), b in matrix(5, 2), c in matrix(5, 4)) {
        let (ra, rb, rc) = (rep(a.clone()), rep(b.clone()), rep(c.clone()));
        let cat = baseline_concat(&[&ra, &rb, &rc]).unwrap().matrix;
        prop_assert_eq!(cat.shape(), (5, 9));
        prop_assert_eq!(cat.slice_cols(0, 3).unwrap(), a);
        prop_assert_eq!(cat.slice_cols(3, 5).unwrap(), b);
        prop_assert_eq!(cat.slice_cols(5, 9).unwrap(), c);
    }

    #[test]
    fn addition_is_order_free(a in matrix(4, 3), b in matrix(4, 3), c in matrix(4, 3)) {
        let (ra, rb, rc) = (rep(a), rep(b), rep(c));
        let ab = baseline_addition(&[&ra, &rb]).unwrap().matrix;
        prop_assert_eq!(&ab, &baseline_addition(&[&rb, &ra]).unwrap().matrix);
        let abc = baseline_addition(&[&ra, &rb, &rc]).unwrap().matrix;
        let cba = baseline_addition(&[&rc, &rb, &ra]).unwrap().matrix;
        prop_assert!(abc.max_abs_diff(&cba) < 1e-12);
    }

    #[test]
    fn ranks_are_permutations(values in prop::collection::vec(-3i32..3, 1..12), descending in any::<bool>()) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let mut r = rank(&v, descending);
        r.sort_unstable();
        prop_assert_eq!(r, (1..=v.len()).collect::<Vec<_>>());
    }

    #[test]
    fn task_stats_scale_with_the_matrix(m in matrix(4, 4), s in 0.1f64..10.0) {
        let a = task_stats(&m).unwrap();
        let b = task_stats(&m.scale(s)).unwrap();
        for i in 0..4 {
            prop_assert!((a.atd[i] * s - b.atd[i]).abs() < 1e-9 * (1.0 + b.atd[i].abs()));
            prop_assert!((a.arl[i] * s - b.arl[i]).abs() < 1e-9 * (1.0 + b.arl[i].abs()));
        }
        let mut ranks = a.atd_rank.clone();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, vec![1, 2, 3, 4]);
    }

    #[test]
    fn one_hot_mixing_selects_a_representation(a in matrix(6, 3), b in matrix(6, 3), pick in 0usize..2) {
        let w = Matrix::from_fn(2, 3, |i, _| (i == pick) as u8 as f64);
        let out = mix(&[&a, &b], &MixWeights { w }).unwrap();
        prop_assert_eq!(out, if pick == 0 { a } else { b });
    }

    #[test]
    fn pairwise_bound_holds(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let h1 = rng.normal_matrix(12, 3);
        let h2 = rng.normal_matrix(12, 4);
        let y2 = rng.normal_matrix(12, 2);
        let y_ds = y2.add(&rng.normal_matrix(12, 2).scale(0.3)).unwrap();
        prop_assert!(verify_thm34(&h1, &h2, &y2, &y_ds, 0.0).unwrap().holds);
    }

    #[test]
    fn node_splits_are_disjoint_and_sized(seed in any::<u64>(), per_block in 4usize..15) {
        let params = SbmParams { nodes_per_block: per_block, ..SbmParams::default() };
        let g = synth_sbm(&params, &mut Rng::new(seed)).unwrap();
        let s = split_nodes(&g, (0.6, 0.2, 0.2), &mut Rng::new(seed ^ 1)).unwrap();
        let n = g.n_nodes();
        prop_assert_eq!(s.train.len(), (0.6 * n as f64).round() as usize);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), s.train.len() + s.val.len() + s.test.len());
        prop_assert!(all.iter().all(|&v| v < n));
    }
}
