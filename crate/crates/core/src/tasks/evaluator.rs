use serde::{Deserialize, Serialize};

use super::{TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, FrozenArtifacts, Graph};
use crate::numeric::{dot, pca_project, sigmoid, zscore_columns, HeadObjective, Matrix, Rng};

const PROB_EPS: f64 = 1e-7;
const SUBG_MARGIN: f64 = 0.5;

/// A task's frozen target together with the protocol that scores a head on
/// a representation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossEvaluator {
    pub spec: TaskSpec,
    kind: Kind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Kind {
    /// `Z = H·W` regressed onto `y` on `rows` (all rows when `None`).
    Node { rows: Option<Vec<usize>>, y: Matrix },
    /// `(z_u ∘ z_v)·w` regressed onto `y`.
    PairRegression {
        pairs: Vec<(usize, usize)>,
        y: Vec<f64>,
    },
    /// `(z_u ∘ z_v)·w` as a logit under binary cross-entropy.
    PairBce {
        pairs: Vec<(usize, usize)>,
        labels: Vec<f64>,
        ones_init: bool,
    },
    /// Bilinear discriminator between node and summary vectors.
    Dgi { a_hat: Matrix, perm: Vec<usize> },
    /// Margin loss between anchors and pooled subgraph embeddings.
    Subg {
        samples: Vec<Vec<usize>>,
        perm: Vec<usize>,
    },
}

/// Training objective, reported loss and gradients of one evaluation.
#[derive(Clone, Debug)]
pub struct TaskGrad {
    pub objective: f64,
    pub reported: f64,
    pub d_h: Matrix,
    /// Gradient for the corrupted representation (contrastive training only).
    pub d_h_neg: Option<Matrix>,
    pub d_head: Vec<Matrix>,
}

/// Builds the evaluator for `id`. Structural targets come from the graph
/// with the masked edges removed.
pub fn build_target(id: TaskId, g: &Graph, art: &FrozenArtifacts) -> Result<LossEvaluator> {
    let n = g.n_nodes();
    if art.corruption_perm.len() != n || art.clusters.len() != n {
        return Err(Error::Parameter(format!(
            "artifacts for `{}` do not match a {n}-node graph",
            art.dataset
        )));
    }
    let visible = art.visible_graph(g);
    let kind = match id {
        TaskId::GraphComp => Kind::Node {
            rows: Some(art.feature_mask.clone()),
            y: zscore_columns(g.features()).select_rows(&art.feature_mask),
        },
        TaskId::AttributeMask => Kind::Node {
            rows: None,
            y: zscore_columns(&pca_project(g.features(), art.pca_rank)?),
        },
        TaskId::NodeProp => {
            let deg: Vec<f64> = visible.degrees().iter().map(|&d| d as f64).collect();
            Kind::Node {
                rows: None,
                y: zscore_columns(&Matrix::column_vector(&deg)),
            }
        }
        TaskId::DisCluster => Kind::Node {
            rows: None,
            y: zscore_columns(&discluster_distances(&visible, &art.cluster_centers)),
        },
        TaskId::PairAttSim => {
            let x = g.features();
            let sims: Vec<f64> = art
                .attr_pairs
                .iter()
                .map(|&(u, v)| cosine(x.row(u), x.row(v)))
                .collect();
            let y = zscore_columns(&Matrix::column_vector(&sims)).into_data();
            Kind::PairRegression {
                pairs: art.attr_pairs.clone(),
                y,
            }
        }
        TaskId::Gae => {
            let mut pairs: Vec<(usize, usize)> = visible.edges().to_vec();
            let mut labels = vec![1.0; pairs.len()];
            pairs.extend(art.gae_negatives.iter().copied());
            labels.resize(pairs.len(), 0.0);
            Kind::PairBce {
                pairs,
                labels,
                ones_init: true,
            }
        }
        TaskId::EdgeMask => {
            let mut pairs = art.masked_edges.clone();
            let mut labels = vec![1.0; pairs.len()];
            pairs.extend(art.negative_edges.iter().copied());
            labels.resize(pairs.len(), 0.0);
            Kind::PairBce {
                pairs,
                labels,
                ones_init: false,
            }
        }
        TaskId::Dgi => Kind::Dgi {
            a_hat: normalize_adjacency(&visible),
            perm: art.corruption_perm.clone(),
        },
        TaskId::SubgCon => Kind::Subg {
            samples: art.subgraph_samples.clone(),
            perm: art.corruption_perm.clone(),
        },
    };
    Ok(LossEvaluator {
        spec: TaskSpec::new(id, g, art),
        kind,
    })
}

/// Hop distance from every node to every center; unreachable pairs get
/// `diameter + 1`.
pub fn discluster_distances(g: &Graph, centers: &[usize]) -> Matrix {
    let adj = g.neighbors();
    let sentinel = (g.diameter() + 1) as f64;
    let mut out = Matrix::zeros(g.n_nodes(), centers.len());
    for (c, &center) in centers.iter().enumerate() {
        for (v, d) in g.bfs_distances(center, &adj).into_iter().enumerate() {
            out[(v, c)] = d.map_or(sentinel, |d| d as f64);
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Clamped binary cross-entropy on a logit; the gradient is zero where the
/// clamp is active.
fn bce_logit(x: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(x);
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
    let grad = if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        0.0
    } else {
        p - label
    };
    (loss, grad)
}

fn pair_features(h: &Matrix, pairs: &[(usize, usize)]) -> Matrix {
    let d = h.cols();
    let mut f = Matrix::zeros(pairs.len(), d);
    for (p, &(u, v)) in pairs.iter().enumerate() {
        let (hu, hv) = (h.row(u), h.row(v));
        for (k, out) in f.row_mut(p).iter_mut().enumerate().take(d) {
            *out = hu[k] * hv[k];
        }
    }
    f
}

/// Backpropagates `dF` of pair products into `dH`.
fn pair_features_backward(h: &Matrix, pairs: &[(usize, usize)], df: &Matrix) -> Matrix {
    let d = h.cols();
    let mut dh = Matrix::zeros(h.rows(), d);
    for (p, &(u, v)) in pairs.iter().enumerate() {
        for k in 0..d {
            let g = df[(p, k)];
            let (hu, hv) = (h[(u, k)], h[(v, k)]);
            dh[(u, k)] += g * hv;
            dh[(v, k)] += g * hu;
        }
    }
    dh
}

/// Adds row `i` of `m` into row `idx[i]` of an `n_rows`-row zero matrix.
fn scatter_rows(m: &Matrix, idx: &[usize], n_rows: usize) -> Matrix {
    let mut out = Matrix::zeros(n_rows, m.cols());
    for (i, &p) in idx.iter().enumerate() {
        for (o, v) in out.row_mut(p).iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

const CONVEX_HEAD_SCALE: f64 = 1e-2;

impl LossEvaluator {
    pub fn id(&self) -> TaskId {
        self.spec.id
    }

    /// Reported loss of `head` on `h`: Frobenius norm of the residual for
    /// regression tasks, mean loss otherwise.
    pub fn eval_loss(&self, h: &Matrix, head: &[Matrix]) -> Result<f64> {
        Ok(self.evaluate(h, None, head, false)?.reported)
    }

    /// Shapes of the head parameters for a `d`-column representation.
    pub fn head_shapes(&self, d: usize) -> Vec<(usize, usize)> {
        match &self.kind {
            Kind::Node { y, .. } => vec![(d, y.cols())],
            Kind::PairRegression { .. } | Kind::PairBce { .. } => vec![(d, 1)],
            Kind::Dgi { .. } => vec![(d, d), (d, d)],
            Kind::Subg { .. } => vec![(d, d)],
        }
    }

    /// Head used while training an encoder on this task. The inner-product
    /// decoder task starts from all-ones weights.
    pub fn init_head(&self, d: usize, rng: &mut Rng) -> Vec<Matrix> {
        if let Kind::PairBce {
            ones_init: true, ..
        } = self.kind
        {
            return vec![Matrix::filled(d, 1, 1.0)];
        }
        self.probe_head(d, rng)
    }

    /// Head used when fitting this task on a frozen representation.
    pub fn probe_head(&self, d: usize, rng: &mut Rng) -> Vec<Matrix> {
        // Linear heads are convex problems: a near-zero start keeps the fitted
        // loss insensitive to the seed under a fixed epoch budget.
        let scale = match self.kind {
            Kind::Dgi { .. } | Kind::Subg { .. } => 1.0,
            _ => CONVEX_HEAD_SCALE,
        };
        let bound = scale / (d.max(1) as f64).sqrt();
        self.head_shapes(d)
            .into_iter()
            .map(|(r, c)| rng.uniform_matrix(r, c, -bound, bound))
            .collect()
    }

    /// Objective, reported loss and gradients. `h_neg` supplies the encoding
    /// of corrupted features during contrastive encoder training; without it
    /// the negatives are derived from `h` itself.
    pub fn evaluate(
        &self,
        h: &Matrix,
        h_neg: Option<&Matrix>,
        head: &[Matrix],
        need_dh: bool,
    ) -> Result<TaskGrad> {
        let shapes = self.head_shapes(h.cols());
        if head.len() != shapes.len() || head.iter().zip(&shapes).any(|(m, s)| m.shape() != *s) {
            return Err(Error::dims(
                "task head",
                format!("{shapes:?}"),
                format!("{:?}", head.iter().map(Matrix::shape).collect::<Vec<_>>()),
            ));
        }
        match &self.kind {
            Kind::Node { rows, y } => self.eval_node(h, rows.as_deref(), y, &head[0], need_dh),
            Kind::PairRegression { pairs, y } => {
                eval_pair_regression(h, pairs, y, &head[0], need_dh)
            }
            Kind::PairBce { pairs, labels, .. } => {
                eval_pair_bce(h, pairs, labels, &head[0], need_dh)
            }
            Kind::Dgi { a_hat, perm } => eval_dgi(h, h_neg, a_hat, perm, head, need_dh),
            Kind::Subg { samples, perm } => eval_subg(h, samples, perm, &head[0], need_dh),
        }
    }

    fn eval_node(
        &self,
        h: &Matrix,
        rows: Option<&[usize]>,
        y: &Matrix,
        w: &Matrix,
        need_dh: bool,
    ) -> Result<TaskGrad> {
        let hs = match rows {
            Some(r) => h.select_rows(r),
            None => h.clone(),
        };
        let resid = hs.matmul(w)?.sub(y)?;
        let norm = resid.frobenius();
        let dw = hs.t_matmul(&resid)?;
        let d_h = if need_dh {
            let local = resid.matmul_t(w)?;
            match rows {
                Some(r) => scatter_rows(&local, r, h.rows()),
                None => local,
            }
        } else {
            Matrix::zeros(0, 0)
        };
        Ok(TaskGrad {
            objective: 0.5 * norm * norm,
            reported: norm,
            d_h,
            d_h_neg: None,
            d_head: vec![dw],
        })
    }
}

fn eval_pair_regression(
    h: &Matrix,
    pairs: &[(usize, usize)],
    y: &[f64],
    w: &Matrix,
    need_dh: bool,
) -> Result<TaskGrad> {
    let f = pair_features(h, pairs);
    let mut resid = f.matmul(w)?;
    for (r, &t) in resid.data_mut().iter_mut().zip(y) {
        *r -= t;
    }
    let norm = resid.frobenius();
    let dw = f.t_matmul(&resid)?;
    let d_h = if need_dh {
        pair_features_backward(h, pairs, &resid.matmul_t(w)?)
    } else {
        Matrix::zeros(0, 0)
    };
    Ok(TaskGrad {
        objective: 0.5 * norm * norm,
        reported: norm,
        d_h,
        d_h_neg: None,
        d_head: vec![dw],
    })
}

fn eval_pair_bce(
    h: &Matrix,
    pairs: &[(usize, usize)],
    labels: &[f64],
    w: &Matrix,
    need_dh: bool,
) -> Result<TaskGrad> {
    if pairs.is_empty() {
        return Ok(TaskGrad {
            objective: 0.0,
            reported: 0.0,
            d_h: Matrix::zeros(h.rows(), h.cols()),
            d_h_neg: None,
            d_head: vec![Matrix::zeros(w.rows(), 1)],
        });
    }
    let f = pair_features(h, pairs);
    let logits = f.matmul(w)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut g = Matrix::zeros(pairs.len(), 1);
    for (p, (&x, &t)) in logits.data().iter().zip(labels).enumerate() {
        let (l, dx) = bce_logit(x, t);
        loss += l * scale;
        g[(p, 0)] = dx * scale;
    }
    let dw = f.t_matmul(&g)?;
    let d_h = if need_dh {
        pair_features_backward(h, pairs, &g.matmul_t(w)?)
    } else {
        Matrix::zeros(0, 0)
    };
    Ok(TaskGrad {
        objective: loss,
        reported: loss,
        d_h,
        d_h_neg: None,
        d_head: vec![dw],
    })
}

/// DGI scoring. Frozen evaluation propagates the projected representation
/// and its row-shuffled copy through `a_hat`; encoder training passes the
/// corrupted encoding explicitly.
fn eval_dgi(
    h: &Matrix,
    h_neg: Option<&Matrix>,
    a_hat: &Matrix,
    perm: &[usize],
    head: &[Matrix],
    need_dh: bool,
) -> Result<TaskGrad> {
    let (w, m) = (&head[0], &head[1]);
    let n = h.rows();
    let z = h.matmul(w)?;
    let (p, q) = match h_neg {
        Some(hn) => (z, hn.matmul(w)?),
        None => (a_hat.matmul(&z)?, a_hat.matmul(&z.select_rows(perm))?),
    };
    let d = p.cols();
    let u = p.column_means();
    let s: Vec<f64> = u.iter().map(|&x| sigmoid(x)).collect();
    let v: Vec<f64> = (0..d).map(|a| dot(m.row(a), &s)).collect();

    let scale = 0.5 / n as f64;
    let mut loss = 0.0;
    let mut gp = vec![0.0; n];
    let mut gq = vec![0.0; n];
    for i in 0..n {
        let (lp, dp) = bce_logit(dot(p.row(i), &v), 1.0);
        let (lq, dq) = bce_logit(dot(q.row(i), &v), 0.0);
        loss += (lp + lq) * scale;
        gp[i] = dp * scale;
        gq[i] = dq * scale;
    }

    let mut dp_mat = Matrix::from_fn(n, d, |i, k| gp[i] * v[k]);
    let dq_mat = Matrix::from_fn(n, d, |i, k| gq[i] * v[k]);
    let mut dv = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            dv[k] += gp[i] * p[(i, k)] + gq[i] * q[(i, k)];
        }
    }
    let dm = Matrix::from_fn(d, d, |a, b| dv[a] * s[b]);
    let ds: Vec<f64> = (0..d)
        .map(|b| (0..d).map(|a| m[(a, b)] * dv[a]).sum())
        .collect();
    for k in 0..d {
        let du = ds[k] * s[k] * (1.0 - s[k]) / n as f64;
        for i in 0..n {
            dp_mat[(i, k)] += du;
        }
    }

    let (dw, d_h, d_h_neg) = match h_neg {
        Some(hn) => {
            let mut dw = h.t_matmul(&dp_mat)?;
            dw.add_assign(&hn.t_matmul(&dq_mat)?)?;
            let (dh, dhn) = if need_dh {
                (dp_mat.matmul_t(w)?, Some(dq_mat.matmul_t(w)?))
            } else {
                (Matrix::zeros(0, 0), None)
            };
            (dw, dh, dhn)
        }
        None => {
            // a_hat is symmetric
            let dz_pos = a_hat.matmul(&dp_mat)?;
            let dz_neg = scatter_rows(&a_hat.matmul(&dq_mat)?, perm, n);
            let dz = dz_pos.add(&dz_neg)?;
            let dw = h.t_matmul(&dz)?;
            let dh = if need_dh {
                dz.matmul_t(w)?
            } else {
                Matrix::zeros(0, 0)
            };
            (dw, dh, None)
        }
    };
    Ok(TaskGrad {
        objective: loss,
        reported: loss,
        d_h,
        d_h_neg,
        d_head: vec![dw, dm],
    })
}

fn eval_subg(
    h: &Matrix,
    samples: &[Vec<usize>],
    perm: &[usize],
    w: &Matrix,
    need_dh: bool,
) -> Result<TaskGrad> {
    let z = h.matmul(w)?;
    let (n, d) = z.shape();
    let pooled = Matrix::from_fn(n, d, |a, k| {
        samples[a].iter().map(|&j| z[(j, k)]).sum::<f64>() / samples[a].len() as f64
    });
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dz = Matrix::zeros(n, d);
    let mut dpool = Matrix::zeros(n, d);
    for a in 0..n {
        let b = perm[a];
        let xp = dot(z.row(a), pooled.row(a));
        let xn = dot(z.row(a), pooled.row(b));
        let (sp, sn) = (sigmoid(xp), sigmoid(xn));
        let l = sn - sp + SUBG_MARGIN;
        if l <= 0.0 {
            continue;
        }
        loss += l * scale;
        let gp = -scale * sp * (1.0 - sp);
        let gn = scale * sn * (1.0 - sn);
        for k in 0..d {
            dz[(a, k)] += gp * pooled[(a, k)] + gn * pooled[(b, k)];
            dpool[(a, k)] += gp * z[(a, k)];
            dpool[(b, k)] += gn * z[(a, k)];
        }
    }
    for a in 0..n {
        let share = 1.0 / samples[a].len() as f64;
        for &j in &samples[a] {
            for k in 0..d {
                dz[(j, k)] += dpool[(a, k)] * share;
            }
        }
    }
    let dw = h.t_matmul(&dz)?;
    let d_h = if need_dh {
        dz.matmul_t(w)?
    } else {
        Matrix::zeros(0, 0)
    };
    Ok(TaskGrad {
        objective: loss,
        reported: loss,
        d_h,
        d_h_neg: None,
        d_head: vec![dw],
    })
}

impl HeadObjective for LossEvaluator {
    fn head_shapes(&self, input_dim: usize) -> Vec<(usize, usize)> {
        LossEvaluator::head_shapes(self, input_dim)
    }

    fn loss_and_head_grad(&self, h: &Matrix, head: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let g = self.evaluate(h, None, head, false)?;
        Ok((g.objective, g.d_head))
    }

    fn loss(&self, h: &Matrix, head: &[Matrix]) -> Result<f64> {
        self.eval_loss(h, head)
    }

    fn init_head(&self, input_dim: usize, rng: &mut Rng) -> Vec<Matrix> {
        self.probe_head(input_dim, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{freeze_artifacts, ArtifactConfig};

    fn graph(n: usize, edges: &[(usize, usize)], f: usize) -> Graph {
        let x = Matrix::from_fn(n, f, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        Graph::new("t", n, edges.iter().copied(), x, None).unwrap()
    }

    fn unmasked(g: &Graph, clusters: usize) -> FrozenArtifacts {
        let cfg = ArtifactConfig {
            clusters,
            ..Default::default()
        };
        let mut a = freeze_artifacts(g, &cfg, &Rng::new(1)).unwrap();
        a.masked_edges.clear();
        a
    }

    #[test]
    fn nodeprop_path_zscore() {
        let g = graph(3, &[(0, 1), (1, 2)], 2);
        let ev = build_target(TaskId::NodeProp, &g, &unmasked(&g, 1)).unwrap();
        let Kind::Node { y, .. } = &ev.kind else {
            unreachable!()
        };
        let want = [-0.5f64.sqrt(), 2.0f64.sqrt(), -0.5f64.sqrt()];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn discluster_two_triangles() {
        let g = graph(6, &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)], 2);
        let a = unmasked(&g, 2);
        let dist = discluster_distances(&g, &a.cluster_centers);
        for v in 0..6 {
            let own = a.clusters[v];
            assert!(dist[(v, own)] <= 1.0);
            assert_eq!(dist[(v, 1 - own)], 2.0);
        }
    }

    #[test]
    fn perfect_regression_and_half_probability() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], 3);
        let a = unmasked(&g, 2);
        let ev = build_target(TaskId::AttributeMask, &g, &a).unwrap();
        let Kind::Node { y, .. } = &ev.kind else {
            unreachable!()
        };
        // H = Y, W = I reproduces the target exactly
        let w = Matrix::identity(y.cols());
        assert_eq!(ev.eval_loss(y, &[w]).unwrap(), 0.0);

        let em = build_target(TaskId::EdgeMask, &g, &a).unwrap();
        let h = Matrix::filled(5, 3, 1.0);
        let loss = em.eval_loss(&h, &[Matrix::zeros(3, 1)]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gae_on_triangle_has_only_positives() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)], 2);
        let a = unmasked(&g, 1);
        assert!(a.gae_negatives.is_empty());
        let ev = build_target(TaskId::Gae, &g, &a).unwrap();
        let Kind::PairBce { labels, .. } = &ev.kind else {
            unreachable!()
        };
        assert_eq!(labels, &vec![1.0; 3]);
    }

    #[test]
    fn dgi_separable_limit() {
        let (pos, _) = bce_logit(1e3, 1.0);
        let (neg, _) = bce_logit(-1e3, 0.0);
        assert!(pos < 2e-7 && neg < 2e-7);
    }
}
