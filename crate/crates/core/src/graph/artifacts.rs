use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Knobs for the one-time sampling of every stochastic task ingredient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    /// Fraction of nodes whose features are hidden for feature completion.
    pub feature_mask_ratio: f64,
    /// Fraction of edges held out for edge-mask prediction and link evaluation.
    pub edge_mask_ratio: f64,
    /// Negatives sampled per masked edge.
    pub negative_ratio: f64,
    pub clusters: usize,
    pub subgraph_size: usize,
    pub ppr_restart: f64,
    pub ppr_iterations: usize,
    /// Frozen node pairs per node for attribute-similarity regression.
    pub pairs_per_node: usize,
    pub embed_dim: usize,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            feature_mask_ratio: 0.2,
            edge_mask_ratio: 0.1,
            negative_ratio: 1.0,
            clusters: 4,
            subgraph_size: 10,
            ppr_restart: 0.15,
            ppr_iterations: 30,
            pairs_per_node: 2,
            embed_dim: 32,
        }
    }
}

impl ArtifactConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )))
            }
        };
        open("feature_mask_ratio", self.feature_mask_ratio)?;
        open("edge_mask_ratio", self.edge_mask_ratio)?;
        open("ppr_restart", self.ppr_restart)?;
        if self.negative_ratio <= 0.0 || !self.negative_ratio.is_finite() {
            return Err(Error::Parameter("negative_ratio must be positive".into()));
        }
        if self.clusters == 0 || self.subgraph_size == 0 || self.embed_dim == 0 {
            return Err(Error::Parameter(
                "clusters, subgraph_size and embed_dim must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Every random ingredient of the task targets, drawn once per dataset and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenArtifacts {
    pub dataset: String,
    pub seed: u64,
    /// Nodes whose features are masked, sorted.
    pub feature_mask: Vec<usize>,
    /// Held-out true edges; removed from the graph every encoder sees.
    pub masked_edges: Vec<(usize, usize)>,
    /// Non-edges paired with `masked_edges`.
    pub negative_edges: Vec<(usize, usize)>,
    /// Non-edges used as reconstruction negatives, disjoint from `negative_edges`.
    pub gae_negatives: Vec<(usize, usize)>,
    pub corruption_perm: Vec<usize>,
    /// Per-anchor node lists, anchor first.
    pub subgraph_samples: Vec<Vec<usize>>,
    pub clusters: Vec<usize>,
    pub cluster_centers: Vec<usize>,
    pub attr_pairs: Vec<(usize, usize)>,
    pub pca_rank: usize,
}

impl FrozenArtifacts {
    /// The graph with the masked edges removed.
    pub fn visible_graph(&self, g: &Graph) -> Graph {
        g.without_edges(&self.masked_edges)
    }

    pub fn sidecar_name(dataset: &str, seed: u64) -> String {
        format!("artifacts_{dataset}_{seed}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::sidecar_name(&self.dataset, self.seed));
        let text = serde_json::to_string(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn freeze_artifacts(g: &Graph, cfg: &ArtifactConfig, rng: &Rng) -> Result<FrozenArtifacts> {
    cfg.validate()?;
    let n = g.n_nodes();
    if n == 0 {
        return Err(Error::Parameter(
            "cannot freeze artifacts on an empty graph".into(),
        ));
    }
    if cfg.clusters > n {
        return Err(Error::Parameter(format!(
            "{} clusters requested for {n} nodes",
            cfg.clusters
        )));
    }

    let mut mask_rng = rng.split(0);
    let n_mask = ((cfg.feature_mask_ratio * n as f64).round() as usize).clamp(1, n);
    let mut feature_mask = mask_rng.permutation(n)[..n_mask].to_vec();
    feature_mask.sort_unstable();

    let m = g.n_edges();
    let n_masked = ((cfg.edge_mask_ratio * m as f64).round() as usize).max(1);
    if n_masked > m {
        return Err(Error::Parameter(format!(
            "edge mask wants {n_masked} edges but the graph has {m}"
        )));
    }
    let mut edge_rng = rng.split(1);
    let mut idx = edge_rng.permutation(m);
    idx.truncate(n_masked);
    idx.sort_unstable();
    let masked_edges: Vec<(usize, usize)> = idx.iter().map(|&i| g.edges()[i]).collect();

    let mut excluded = g.edge_set();
    let n_neg = ((cfg.negative_ratio * n_masked as f64).round() as usize).max(1);
    let negative_edges = sample_non_edges(n, &excluded, n_neg, &mut rng.split(2));
    excluded.extend(negative_edges.iter().copied());
    let gae_negatives = sample_non_edges(n, &excluded, m - n_masked, &mut rng.split(3));

    let corruption_perm = rng.split(4).permutation(n);

    let mut pair_rng = rng.split(5);
    let attr_pairs = if n >= 2 {
        (0..cfg.pairs_per_node * n)
            .map(|_| {
                let u = pair_rng.below(n);
                let v = (u + 1 + pair_rng.below(n - 1)) % n;
                (u, v)
            })
            .collect()
    } else {
        Vec::new()
    };

    let visible = g.without_edges(&masked_edges);
    let adj = visible.neighbors();
    let subgraph_samples = (0..n)
        .map(|a| {
            top_ppr(
                &adj,
                a,
                cfg.ppr_restart,
                cfg.ppr_iterations,
                cfg.subgraph_size,
            )
        })
        .collect();
    let (clusters, cluster_centers) = partition_clusters(&visible, cfg.clusters);
    let pca_rank = g.features().cols().min(cfg.embed_dim).min(n);

    Ok(FrozenArtifacts {
        dataset: g.name.clone(),
        seed: rng.seed(),
        feature_mask,
        masked_edges,
        negative_edges,
        gae_negatives,
        corruption_perm,
        subgraph_samples,
        clusters,
        cluster_centers,
        attr_pairs,
        pca_rank,
    })
}

/// Uniform non-edges `(u < v)` avoiding `excluded`, without replacement.
/// Returns every available pair when fewer than `count` exist.
fn sample_non_edges(
    n: usize,
    excluded: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let available = total.saturating_sub(excluded.len());
    if count == 0 || available == 0 {
        return Vec::new();
    }
    let mut out: Vec<(usize, usize)>;
    if count * 3 >= available {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|e| !excluded.contains(e))
            .collect();
        if count > all.len() {
            log::warn!("only {} non-edges exist; {count} requested", all.len());
        }
        rng.shuffle(&mut all);
        all.truncate(count);
        out = all;
    } else {
        let mut seen = HashSet::new();
        out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.below(n);
            let v = rng.below(n);
            if u == v {
                continue;
            }
            let e = (u.min(v), u.max(v));
            if !excluded.contains(&e) && seen.insert(e) {
                out.push(e);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Truncated personalized PageRank from `anchor`. Mass at isolated nodes
/// returns to the anchor.
pub fn personalized_pagerank(
    adj: &[Vec<usize>],
    anchor: usize,
    restart: f64,
    iterations: usize,
) -> Vec<f64> {
    let n = adj.len();
    let mut p = vec![0.0; n];
    p[anchor] = 1.0;
    for _ in 0..iterations {
        let mut next = vec![0.0; n];
        next[anchor] += restart;
        for u in 0..n {
            if p[u] == 0.0 {
                continue;
            }
            let mass = (1.0 - restart) * p[u];
            if adj[u].is_empty() {
                next[anchor] += mass;
            } else {
                let share = mass / adj[u].len() as f64;
                for &v in &adj[u] {
                    next[v] += share;
                }
            }
        }
        p = next;
    }
    p
}

fn top_ppr(
    adj: &[Vec<usize>],
    anchor: usize,
    restart: f64,
    iters: usize,
    size: usize,
) -> Vec<usize> {
    let scores = personalized_pagerank(adj, anchor, restart, iters);
    let mut ranked: Vec<usize> = (0..adj.len())
        .filter(|&v| v != anchor && scores[v] > 0.0)
        .collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![anchor];
    out.extend(ranked.into_iter().take(size - 1));
    out
}

/// Partition into `k` clusters: whole components when there are at least
/// `k` of them, otherwise balanced multi-source BFS. Returns the cluster id
/// per node and one max-degree center per cluster (ties to the lowest id).
fn partition_clusters(g: &Graph, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = g.n_nodes();
    let deg = g.degrees();
    let (n_comp, comp) = g.components();
    let mut assign = vec![usize::MAX; n];

    if n_comp >= k {
        let mut sizes = vec![(0usize, usize::MAX); n_comp];
        for (v, &c) in comp.iter().enumerate() {
            sizes[c].0 += 1;
            sizes[c].1 = sizes[c].1.min(v);
        }
        let mut order: Vec<usize> = (0..n_comp).collect();
        order.sort_by(|&a, &b| {
            sizes[b]
                .0
                .cmp(&sizes[a].0)
                .then(sizes[a].1.cmp(&sizes[b].1))
        });
        let mut cluster_of_comp = vec![k - 1; n_comp];
        for (rank, &c) in order.iter().take(k - 1).enumerate() {
            cluster_of_comp[c] = rank;
        }
        for v in 0..n {
            assign[v] = cluster_of_comp[comp[v]];
        }
    } else {
        let by_degree = |a: &usize, b: &usize| deg[*b].cmp(&deg[*a]).then(a.cmp(b));
        let mut seeds: Vec<usize> = Vec::with_capacity(k);
        for c in 0..n_comp {
            let best = (0..n).filter(|&v| comp[v] == c).min_by(by_degree);
            seeds.extend(best);
        }
        let mut rest: Vec<usize> = (0..n).filter(|v| !seeds.contains(v)).collect();
        rest.sort_by(by_degree);
        seeds.extend(rest.into_iter().take(k - n_comp));

        let adj = g.neighbors();
        let mut sizes = vec![1usize; k];
        let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
        for (c, &s) in seeds.iter().enumerate() {
            assign[s] = c;
            queues[c].push_back(s);
        }
        loop {
            let pick = (0..k)
                .filter(|&c| !queues[c].is_empty())
                .min_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(a.cmp(&b)));
            let Some(c) = pick else { break };
            let u = queues[c][0];
            match adj[u].iter().copied().find(|&v| assign[v] == usize::MAX) {
                Some(v) => {
                    assign[v] = c;
                    sizes[c] += 1;
                    queues[c].push_back(v);
                }
                None => {
                    queues[c].pop_front();
                }
            }
        }
    }

    let mut centers = vec![usize::MAX; k];
    for v in 0..n {
        let c = assign[v];
        if centers[c] == usize::MAX || deg[v] > deg[centers[c]] {
            centers[c] = v;
        }
    }
    (assign, centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    fn bare(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new("t", n, edges.iter().copied(), Matrix::zeros(n, 3), None).unwrap()
    }

    #[test]
    fn edge_mask_counts() {
        let g = bare(6, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let cfg = ArtifactConfig {
            edge_mask_ratio: 0.5,
            clusters: 2,
            ..Default::default()
        };
        let a = freeze_artifacts(&g, &cfg, &Rng::new(4)).unwrap();
        assert_eq!(a.masked_edges.len(), 2);
        assert_eq!(a.negative_edges.len(), 2);
        assert!(a.masked_edges.iter().all(|&(u, v)| g.has_edge(u, v)));
        assert!(a.negative_edges.iter().all(|&(u, v)| !g.has_edge(u, v)));
        assert!(a
            .gae_negatives
            .iter()
            .all(|e| !a.negative_edges.contains(e)));
    }

    #[test]
    fn too_many_masked_edges() {
        let g = bare(3, &[]);
        assert!(freeze_artifacts(
            &g,
            &ArtifactConfig {
                clusters: 1,
                ..Default::default()
            },
            &Rng::new(0)
        )
        .is_err());
    }

    #[test]
    fn two_triangles_two_clusters() {
        let g = bare(6, &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]);
        // after dropping the bridge the triangles are separate components
        let vis = g.without_edges(&[(2, 3)]);
        let (assign, centers) = partition_clusters(&vis, 2);
        assert_eq!(assign, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(centers, vec![0, 3]);
    }

    #[test]
    fn bfs_partition_splits_chained_stars() {
        let mut edges = vec![(0, 5), (5, 10)];
        for c in [0, 5, 10] {
            edges.extend((1..5).map(|l| (c, c + l)));
        }
        let g = bare(15, &edges);
        let (assign, centers) = partition_clusters(&g, 3);
        assert_eq!(centers, vec![5, 0, 10]);
        for (c, &ctr) in centers.iter().enumerate() {
            assert!((0..5).all(|l| assign[ctr + l] == c));
        }
    }

    #[test]
    fn ppr_sums_to_one_and_ranks_neighbors() {
        let g = bare(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = personalized_pagerank(&g.neighbors(), 0, 0.15, 30);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let top = top_ppr(&g.neighbors(), 0, 0.15, 30, 2);
        assert_eq!(top, vec![0, 1]);
        let iso = bare(2, &[]);
        assert_eq!(top_ppr(&iso.neighbors(), 1, 0.15, 30, 10), vec![1]);
    }

    #[test]
    fn refreeze_is_identical() {
        let g = bare(
            8,
            &[
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 4),
                (4, 5),
                (5, 6),
                (6, 7),
                (0, 7),
            ],
        );
        let cfg = ArtifactConfig {
            clusters: 2,
            ..Default::default()
        };
        let a = freeze_artifacts(&g, &cfg, &Rng::new(11)).unwrap();
        let b = freeze_artifacts(&g, &cfg, &Rng::new(11)).unwrap();
        assert_eq!(a, b);
        let mut inv = [0; 8];
        for (i, &p) in a.corruption_perm.iter().enumerate() {
            inv[p] = i;
        }
        assert!((0..8).all(|i| a.corruption_perm[inv[i]] == i));
    }
}
