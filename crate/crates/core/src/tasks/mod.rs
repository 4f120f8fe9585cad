//! Registry of self-supervised tasks: target construction and loss evaluation
//! for a linear head on a fixed representation.

mod evaluator;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use evaluator::{build_target, discluster_distances, LossEvaluator, TaskGrad};

use crate::error::{Error, Result};
use crate::graph::{FrozenArtifacts, Graph};
use crate::numeric::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    GraphComp,
    AttributeMask,
    Gae,
    EdgeMask,
    NodeProp,
    DisCluster,
    Dgi,
    SubgCon,
    PairAttSim,
}

/// The eight tasks used to build correlation matrices, in canonical order.
pub const BASE_TASKS: [TaskId; 8] = [
    TaskId::GraphComp,
    TaskId::AttributeMask,
    TaskId::Gae,
    TaskId::EdgeMask,
    TaskId::NodeProp,
    TaskId::DisCluster,
    TaskId::Dgi,
    TaskId::SubgCon,
];

impl TaskId {
    pub const ALL: [TaskId; 9] = [
        TaskId::GraphComp,
        TaskId::AttributeMask,
        TaskId::Gae,
        TaskId::EdgeMask,
        TaskId::NodeProp,
        TaskId::DisCluster,
        TaskId::Dgi,
        TaskId::SubgCon,
        TaskId::PairAttSim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::GraphComp => "graphcomp",
            TaskId::AttributeMask => "attributemask",
            TaskId::Gae => "gae",
            TaskId::EdgeMask => "edgemask",
            TaskId::NodeProp => "nodeprop",
            TaskId::DisCluster => "discluster",
            TaskId::Dgi => "dgi",
            TaskId::SubgCon => "subgcon",
            TaskId::PairAttSim => "pairattsim",
        }
    }

    pub fn category(self) -> Category {
        match self {
            TaskId::GraphComp | TaskId::AttributeMask => Category::FB,
            TaskId::Gae | TaskId::EdgeMask => Category::SB,
            TaskId::NodeProp | TaskId::DisCluster | TaskId::PairAttSim => Category::APB,
            TaskId::Dgi | TaskId::SubgCon => Category::CB,
        }
    }

    pub fn loss_form(self) -> LossForm {
        match self {
            TaskId::Gae => LossForm::BceAdjacency,
            TaskId::EdgeMask => LossForm::BcePairs,
            TaskId::Dgi => LossForm::ContrastiveDgi,
            TaskId::SubgCon => LossForm::ContrastiveSubg,
            _ => LossForm::SquaredNorm,
        }
    }

    pub fn is_regression(self) -> bool {
        self.loss_form() == LossForm::SquaredNorm
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(TaskId::as_str).join(", ")
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| Error::UnknownTask {
                id: s.to_string(),
                valid: Self::valid_ids(),
            })
    }
}

/// Parses a comma-separated task list.
pub fn parse_task_list(s: &str) -> Result<Vec<TaskId>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    /// Feature-based.
    FB,
    /// Structure-based.
    SB,
    /// Auxiliary property-based.
    APB,
    /// Contrast-based.
    CB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    SquaredNorm,
    BceAdjacency,
    BcePairs,
    ContrastiveDgi,
    ContrastiveSubg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub category: Category,
    /// Width of the target per scored item (node row or node pair).
    pub target_dim: usize,
    pub loss_form: LossForm,
}

impl TaskSpec {
    pub fn new(id: TaskId, g: &Graph, artifacts: &FrozenArtifacts) -> Self {
        let target_dim = match id {
            TaskId::GraphComp => g.features().cols(),
            TaskId::AttributeMask => artifacts.pca_rank,
            TaskId::DisCluster => artifacts.cluster_centers.len(),
            _ => 1,
        };
        Self {
            id,
            category: id.category(),
            target_dim,
            loss_form: id.loss_form(),
        }
    }
}

/// Row-shuffle corruption: row `i` of the output is row `perm[i]` of `x`.
pub fn corrupt_features(x: &Matrix, perm: &[usize]) -> Result<Matrix> {
    if perm.len() != x.rows() {
        return Err(Error::dims("corrupt_features", x.rows(), perm.len()));
    }
    Ok(x.select_rows(perm))
}

/// Copy of `x` with the listed rows zeroed.
pub fn mask_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = x.clone();
    for &r in rows {
        out.row_mut(r).fill(0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_roundtrip_and_unknown_lists_valid() {
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
        let err = "grace".parse::<TaskId>().unwrap_err();
        assert!(err.to_string().contains("graphcomp, attributemask"));
        assert!(err.is_usage());
    }

    #[test]
    fn corruption_is_a_row_permutation() {
        let x = Matrix::from_fn(4, 2, |r, c| (r * 2 + c) as f64);
        let perm = vec![2, 0, 3, 1];
        let y = corrupt_features(&x, &perm).unwrap();
        assert_eq!(y.row(0), x.row(2));
        let mut inv = vec![0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        assert_eq!(corrupt_features(&y, &inv).unwrap(), x);
        let id: Vec<usize> = (0..4).collect();
        assert_eq!(corrupt_features(&x, &id).unwrap(), x);
    }
}
