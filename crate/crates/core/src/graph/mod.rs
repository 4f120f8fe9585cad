//! Graph containers, ingestion, synthetic generation, normalization, node
//! splits and the frozen per-dataset artifacts that pin every task target.

mod artifacts;
mod io;
mod sbm;
mod split;

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use artifacts::{freeze_artifacts, personalized_pagerank, ArtifactConfig, FrozenArtifacts};
pub use io::{load_graph, load_graph_with, save_graph_json, GraphFile, GraphFormat};
pub use sbm::{synth_sbm, SbmParams};
pub use split::{split_nodes, NodeSplits};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Undirected, unweighted attributed graph. Edges are stored once as `(u, v)`
/// with `u < v`, sorted, with no self-loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub name: String,
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

/// Outcome of normalizing a raw edge list.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub duplicates: usize,
    pub self_loops: usize,
}

impl Graph {
    /// Validates ids, drops self-loops and duplicate undirected edges.
    pub fn new(
        name: impl Into<String>,
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        Self::build(name, n_nodes, edges, features, labels).map(|(g, _)| g)
    }

    pub fn build(
        name: impl Into<String>,
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Option<Vec<usize>>,
    ) -> Result<(Self, EdgeCleanup)> {
        if features.rows() != n_nodes {
            return Err(Error::Ingest(format!(
                "feature matrix has {} rows for {n_nodes} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Ingest("features contain non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n_nodes {
                return Err(Error::Ingest(format!(
                    "{} labels for {n_nodes} nodes",
                    l.len()
                )));
            }
        }
        let mut cleanup = EdgeCleanup::default();
        let mut seen = HashSet::new();
        let mut clean = Vec::new();
        for (i, (u, v)) in edges.into_iter().enumerate() {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Ingest(format!(
                    "edge {i} ({u}, {v}) references a node outside 0..{n_nodes}"
                )));
            }
            if u == v {
                cleanup.self_loops += 1;
                continue;
            }
            let e = (u.min(v), u.max(v));
            if seen.insert(e) {
                clean.push(e);
            } else {
                cleanup.duplicates += 1;
            }
        }
        clean.sort_unstable();
        Ok((
            Self {
                name: name.into(),
                n_nodes,
                edges: clean,
                features,
                labels,
            },
            cleanup,
        ))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Same graph with the listed edges removed.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Graph {
        let drop: HashSet<(usize, usize)> =
            removed.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        Graph {
            name: self.name.clone(),
            n_nodes: self.n_nodes,
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| !drop.contains(e))
                .collect(),
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        Graph::new(
            self.name.clone(),
            self.n_nodes,
            self.edges.clone(),
            features,
            self.labels.clone(),
        )
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Graph> {
        if labels.len() != self.n_nodes {
            return Err(Error::Ingest(
                "label count does not match node count".into(),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Hop distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected components as a component id per node (ids in discovery
    /// order of the lowest node id).
    pub fn components(&self) -> (usize, Vec<usize>) {
        let adj = self.neighbors();
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut count = 0;
        for s in 0..self.n_nodes {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = count;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    /// Largest finite shortest-path distance over all node pairs.
    pub fn diameter(&self) -> usize {
        let adj = self.neighbors();
        (0..self.n_nodes)
            .map(|s| {
                self.bfs_distances(s, &adj)
                    .into_iter()
                    .flatten()
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Symmetric normalization `D^{-1/2} (A + I) D^{-1/2}` as a dense matrix.
pub fn normalize_adjacency(g: &Graph) -> Matrix {
    let n = g.n_nodes();
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = inv_sqrt[i] * inv_sqrt[i];
    }
    for &(u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        a[(u, v)] = w;
        a[(v, u)] = w;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new("t", n, edges.iter().copied(), Matrix::zeros(n, 1), None).unwrap()
    }

    #[test]
    fn normalization_hand_cases() {
        assert_eq!(normalize_adjacency(&bare(1, &[])).data(), &[1.0]);
        let two = normalize_adjacency(&bare(2, &[(0, 1)]));
        assert!(two.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let tri = normalize_adjacency(&bare(3, &[(0, 1), (1, 2), (0, 2)]));
        assert!(tri.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn undirected_dedup_and_self_loops() {
        let (g, cleanup) = Graph::build(
            "t",
            3,
            [(0, 1), (1, 0), (2, 2), (1, 2)],
            Matrix::zeros(3, 1),
            None,
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(
            cleanup,
            EdgeCleanup {
                duplicates: 1,
                self_loops: 1
            }
        );
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let err = Graph::new("t", 3, [(0, 5)], Matrix::zeros(3, 1), None).unwrap_err();
        assert!(err.to_string().contains("(0, 5)"));
    }

    #[test]
    fn components_and_diameter() {
        let g = bare(7, &[(0, 1), (1, 2), (3, 4), (4, 5)]);
        assert_eq!(g.components().0, 3);
        assert_eq!(g.diameter(), 2);
    }
}
