use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationConfig;
use crate::encoder::default_opts;
use crate::error::{Error, Result};
use crate::graph::{load_graph_with, synth_sbm, ArtifactConfig, Graph, GraphFormat, SbmParams};
use crate::numeric::{OptimizerConfig, Rng};
use crate::tasks::{TaskId, BASE_TASKS};
use crate::tcm::{EnhanceConfig, TcmConfig};

pub const SYNTHETIC_SBM: &str = "synthetic-sbm";

/// Where the graph comes from: the literal `"synthetic-sbm"`, explicit SBM
/// parameters, or a file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Named(String),
    Synthetic {
        synthetic: SbmParams,
    },
    File {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: GraphFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

fn default_format() -> GraphFormat {
    GraphFormat::Json
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Named(SYNTHETIC_SBM.into())
    }
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Named(n) => n.clone(),
            DatasetSpec::Synthetic { .. } => SYNTHETIC_SBM.into(),
            DatasetSpec::File { path, name, .. } => name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "graph".into())
            }),
        }
    }
}

/// Which extra TCM fits the tcm stage reports next to the main fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcmDiagnostics {
    /// Fit the three ablation variants on the same split.
    pub ablations: bool,
    /// Leave each task out in turn and score its row and column.
    pub holdout: bool,
}

impl Default for TcmDiagnostics {
    fn default() -> Self {
        Self {
            ablations: true,
            holdout: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Each evaluation seed draws its own node split, probe init and link split.
    pub seeds: Vec<u64>,
    /// Train/validation/test node fractions.
    pub split: (f64, f64, f64),
    pub probe: OptimizerConfig,
    /// Also evaluate the addition, concat and multi-loss baselines.
    pub baselines: bool,
    pub multiloss: OptimizerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            split: (0.6, 0.2, 0.2),
            probe: OptimizerConfig::probe_default(),
            baselines: true,
            multiloss: OptimizerConfig::adam(0.001, 5e-4, 200),
        }
    }
}

fn default_tasks() -> Vec<TaskId> {
    BASE_TASKS.to_vec()
}

fn default_embed_dim() -> usize {
    32
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Everything a pipeline run depends on. The seed has no default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub seed: u64,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskId>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub artifacts: ArtifactConfig,
    /// Per-task optimizers; resolution fills every task not listed.
    #[serde(default)]
    pub optimizers: BTreeMap<TaskId, OptimizerConfig>,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default)]
    pub tcm: TcmConfig,
    #[serde(default)]
    pub tcm_diagnostics: TcmDiagnostics,
    #[serde(default)]
    pub enhance: EnhanceConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Treat duplicate edges and self-loops in input files as errors.
    #[serde(default)]
    pub strict: bool,
}

impl RunConfig {
    /// A config with every default and the given seed.
    pub fn with_seed(seed: u64) -> Result<Self> {
        Self::from_value(serde_json::json!({ "seed": seed }))
    }

    /// Parses and resolves a JSON value. Unknown keys, unknown task ids and a
    /// missing seed are configuration errors.
    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    /// Fills defaults that depend on other fields and validates the result.
    /// Resolving a resolved config changes nothing.
    pub fn resolve(mut self) -> Result<Self> {
        if let DatasetSpec::Named(n) = &self.dataset {
            if n != SYNTHETIC_SBM {
                return Err(Error::Config(format!(
                    "unknown dataset `{n}`; use `{SYNTHETIC_SBM}`, {{\"synthetic\": {{..}}}} or {{\"path\": ..}}"
                )));
            }
            self.dataset = DatasetSpec::Synthetic {
                synthetic: SbmParams::default(),
            };
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("task list is empty".into()));
        }
        let unique: BTreeSet<_> = self.tasks.iter().collect();
        if unique.len() != self.tasks.len() {
            return Err(Error::Config("task list contains duplicates".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        self.artifacts.embed_dim = self.embed_dim;
        let name = self.dataset.name();
        for &t in &self.tasks {
            self.optimizers
                .entry(t)
                .or_insert_with(|| default_opts(t, &name));
        }
        let (a, b, c) = self.eval.split;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || a + b + c > 1.0 + 1e-9 {
            return Err(Error::Config(format!(
                "eval split fractions must be positive and sum to at most 1, got {:?}",
                self.eval.split
            )));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval needs at least one seed".into()));
        }
        let check =
            |what: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        check("artifacts", self.artifacts.validate())?;
        check("tcm", self.tcm.validate())?;
        check(
            "correlation optimizer",
            self.correlation.optimizer.validate(),
        )?;
        check("enhance optimizer", self.enhance.optimizer.validate())?;
        check("probe optimizer", self.eval.probe.validate())?;
        check("multiloss optimizer", self.eval.multiloss.validate())?;
        for (t, o) in &self.optimizers {
            check(&format!("optimizer for {t}"), o.validate())?;
        }
        Ok(self)
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.name()
    }

    pub fn root_rng(&self) -> Rng {
        Rng::new(self.seed)
    }

    /// The graph named by the dataset spec; synthetic graphs are drawn from
    /// the run seed.
    pub fn load_graph(&self) -> Result<Graph> {
        let mut g = match &self.dataset {
            DatasetSpec::Named(_) | DatasetSpec::Synthetic { .. } => {
                let params = match &self.dataset {
                    DatasetSpec::Synthetic { synthetic } => synthetic.clone(),
                    _ => SbmParams::default(),
                };
                synth_sbm(&params, &mut self.root_rng().split(100))?
            }
            DatasetSpec::File { path, format, .. } => load_graph_with(path, format, self.strict)?,
        };
        g.name = self.dataset_name();
        Ok(g)
    }
}

/// Reads and resolves a JSON config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_value(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_value(serde_json::json!({"dataset": "synthetic-sbm", "seed": 1}))
            .unwrap();
        assert_eq!(c.tasks, BASE_TASKS.to_vec());
        assert_eq!(c.embed_dim, 32);
        assert_eq!(c.optimizers.len(), 8);
        assert_eq!(
            c.optimizers[&TaskId::Gae],
            OptimizerConfig::adam(0.01, 0.0, 500)
        );
    }

    #[test]
    fn unknown_task_lists_valid_ids() {
        let e =
            RunConfig::from_value(serde_json::json!({"seed": 1, "tasks": ["grace"]})).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("grace") && msg.contains("graphcomp"), "{msg}");
        assert!(e.is_usage());
    }

    #[test]
    fn missing_seed_and_unknown_keys_rejected() {
        assert!(RunConfig::from_value(serde_json::json!({}))
            .unwrap_err()
            .to_string()
            .contains("seed"));
        assert!(RunConfig::from_value(serde_json::json!({"seed": 1, "sede": 2})).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::with_seed(3).unwrap();
        let again = RunConfig::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
