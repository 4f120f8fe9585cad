use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Stochastic block model with Gaussian block-mean features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub noise: f64,
}

impl Default for SbmParams {
    /// The 60-node desk fixture: 5 blocks of 12, p_in 0.3, p_out 0.02,
    /// 16-dimensional features, noise 0.5.
    fn default() -> Self {
        Self {
            blocks: 5,
            nodes_per_block: 12,
            p_in: 0.3,
            p_out: 0.02,
            feat_dim: 16,
            noise: 0.5,
        }
    }
}

pub fn synth_sbm(params: &SbmParams, rng: &mut Rng) -> Result<Graph> {
    let SbmParams {
        blocks,
        nodes_per_block,
        p_in,
        p_out,
        feat_dim,
        noise,
    } = *params;
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=p_in).contains(&p_out) {
        return Err(Error::Parameter(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if noise < 0.0 || blocks == 0 || nodes_per_block == 0 || feat_dim == 0 {
        return Err(Error::Parameter(
            "sbm sizes must be positive and noise >= 0".into(),
        ));
    }
    let n = blocks * nodes_per_block;
    let labels: Vec<usize> = (0..n).map(|i| i / nodes_per_block).collect();
    let means = rng.normal_matrix(blocks, feat_dim);
    let features = Matrix::from_fn(n, feat_dim, |r, c| means[(labels[r], c)]);
    let noise_m = rng.normal_matrix(n, feat_dim);
    let mut features = features;
    features.axpy(noise, &noise_m)?;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new("sbm", n, edges, features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_limit_two_triangles() {
        let p = SbmParams {
            blocks: 2,
            nodes_per_block: 3,
            p_in: 1.0,
            p_out: 0.0,
            feat_dim: 2,
            noise: 0.0,
        };
        let g = synth_sbm(&p, &mut Rng::new(1)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        // zero noise: identical rows per block
        assert_eq!(g.features().row(0), g.features().row(2));
        assert_eq!(g.features().row(3), g.features().row(5));
    }

    #[test]
    fn rejects_bad_probabilities() {
        let p = SbmParams {
            p_in: 0.1,
            p_out: 0.2,
            ..Default::default()
        };
        assert!(synth_sbm(&p, &mut Rng::new(0)).is_err());
    }
}
