use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// On-disk JSON graph container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphFormat {
    Json,
    /// Whitespace-separated `u v` lines plus a header-less features CSV and
    /// an optional file with one integer label per line.
    EdgeList {
        features: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

pub fn load_graph(path: &Path, format: &GraphFormat) -> Result<Graph> {
    load_graph_with(path, format, false)
}

/// Loads a graph. In strict mode duplicate edges and self-loops are errors
/// rather than warnings.
pub fn load_graph_with(path: &Path, format: &GraphFormat, strict: bool) -> Result<Graph> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into());
    let (name, n, edges, features, labels) = match format {
        GraphFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: GraphFile = serde_json::from_str(&text)
                .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
            if file.features.len() > file.n_nodes {
                return Err(Error::Ingest(format!(
                    "feature row {} references node {} outside a {}-node graph",
                    file.n_nodes, file.n_nodes, file.n_nodes
                )));
            }
            let features = feature_matrix(&file.features)?;
            let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
            (
                file.name.unwrap_or(stem),
                file.n_nodes,
                edges,
                features,
                file.labels,
            )
        }
        GraphFormat::EdgeList {
            features: feat_path,
            labels: label_path,
        } => {
            let rows = read_feature_csv(feat_path)?;
            let features = feature_matrix(&rows)?;
            let n = features.rows();
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut edges = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut it = line.split_whitespace();
                let parse = |tok: Option<&str>| -> Result<usize> {
                    tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                        Error::Ingest(format!(
                            "{}:{}: expected `u v`, got `{line}`",
                            path.display(),
                            lineno + 1
                        ))
                    })
                };
                let (u, v) = (parse(it.next())?, parse(it.next())?);
                if u >= n || v >= n {
                    return Err(Error::Ingest(format!(
                        "{}:{}: edge ({u}, {v}) references a node outside the {n} feature rows",
                        path.display(),
                        lineno + 1
                    )));
                }
                edges.push((u, v));
            }
            let labels = match label_path {
                Some(p) => Some(read_labels(p)?),
                None => None,
            };
            (stem, n, edges, features, labels)
        }
    };
    let (g, cleanup) = Graph::build(name, n, edges, features, labels)?;
    if cleanup.duplicates > 0 || cleanup.self_loops > 0 {
        let msg = format!(
            "{}: dropped {} duplicate edges and {} self-loops",
            path.display(),
            cleanup.duplicates,
            cleanup.self_loops
        );
        if strict {
            return Err(Error::Ingest(msg));
        }
        log::warn!("{msg}");
    }
    Ok(g)
}

fn feature_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    if let Some(first) = rows.first() {
        if let Some((i, r)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != first.len())
        {
            return Err(Error::Ingest(format!(
                "ragged feature row {i}: {} values, expected {}",
                r.len(),
                first.len()
            )));
        }
    }
    Matrix::from_rows(rows)
}

fn read_feature_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::Ingest(format!("{}: row {i}: bad number `{t}`", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| Error::Ingest(format!("{}: label row {i}: `{l}`", path.display())))
        })
        .collect()
}

pub fn save_graph_json(g: &Graph, path: &Path) -> Result<()> {
    let file = GraphFile {
        n_nodes: g.n_nodes(),
        edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
        features: (0..g.n_nodes())
            .map(|r| g.features().row(r).to_vec())
            .collect(),
        labels: g.labels().map(|l| l.to_vec()),
        name: Some(g.name.clone()),
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        fs::write(
            &p,
            r#"{"n_nodes":3,"edges":[[0,1],[1,2]],"features":[[1,0],[0,1],[1,1]],"name":"toy"}"#,
        )
        .unwrap();
        let g = load_graph(&p, &GraphFormat::Json).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.name, "toy");
        let q = dir.path().join("h.json");
        save_graph_json(&g, &q).unwrap();
        assert_eq!(load_graph(&q, &GraphFormat::Json).unwrap(), g);
    }

    #[test]
    fn extra_feature_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        fs::write(
            &p,
            r#"{"n_nodes":3,"edges":[],"features":[[1],[2],[3],[4],[5],[6]]}"#,
        )
        .unwrap();
        let err = load_graph(&p, &GraphFormat::Json).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn edgelist_dedups_reversed_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("g.edges");
        let f = dir.path().join("g.csv");
        fs::write(&e, "0 1\n1 0\n").unwrap();
        fs::write(&f, "1.0,2.0\n3.0,4.0\n").unwrap();
        let fmt = GraphFormat::EdgeList {
            features: f.clone(),
            labels: None,
        };
        let g = load_graph(&e, &fmt).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(load_graph_with(&e, &fmt, true).is_err());
    }

    #[test]
    fn edgelist_out_of_range_and_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("g.edges");
        let f = dir.path().join("g.csv");
        fs::write(&e, "0 5\n").unwrap();
        fs::write(&f, "1\n2\n3\n").unwrap();
        let fmt = GraphFormat::EdgeList {
            features: f.clone(),
            labels: None,
        };
        let err = load_graph(&e, &fmt).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
        fs::write(&f, "1,2\n3\n").unwrap();
        assert!(load_graph(&e, &fmt)
            .unwrap_err()
            .to_string()
            .contains("ragged"));
    }
}
