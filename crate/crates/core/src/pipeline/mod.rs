//! Stage-persisted orchestration: train → correlate → tcm → enhance →
//! evaluate → report. Each stage reads its inputs from the output directory
//! and writes its artifacts atomically, so any stage can be rerun alone.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{parse_config, DatasetSpec, EvalConfig, RunConfig, TcmDiagnostics, SYNTHETIC_SBM};

use crate::correlation::{correlation_matrix, CorrelationMatrix};
use crate::encoder::{default_arch, train_ssl, EncoderArch, Representation};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_addition, baseline_concat, baseline_multiloss, linear_probe_nodeclass,
    link_predict_auc, write_results_csv, Metric, ProbeResult, ResultRow,
};
use crate::graph::{freeze_artifacts, split_nodes, FrozenArtifacts, Graph};
use crate::numeric::Matrix;
use crate::tasks::{build_target, LossEvaluator, TaskId};
use crate::tcm::{
    enhance, tcm_fit, tcm_holdout, HoldoutReport, MixWeights, TcmConfig, TcmFitReport, TcmModel,
    TcmVariant, ENHANCED_TASK,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Correlate,
    Tcm,
    Enhance,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Train,
        Stage::Correlate,
        Stage::Tcm,
        Stage::Enhance,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Correlate => "correlate",
            Stage::Tcm => "tcm",
            Stage::Enhance => "enhance",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == key)
            .ok_or_else(|| {
                let valid: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
                Error::Config(format!(
                    "unknown stage `{s}`; valid stages: {}",
                    valid.join(", ")
                ))
            })
    }
}

pub fn parse_stage_list(s: &str) -> Result<Vec<Stage>> {
    let mut v: Vec<Stage> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

pub const COR_JSON: &str = "cor.json";
pub const COR_CSV: &str = "cor.csv";
pub const TCM_JSON: &str = "tcm.json";
pub const TCM_REPORT: &str = "tcm_report.json";
pub const ENHANCED_JSON: &str = "enhanced.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const HEATMAP_CSV: &str = "cor_heatmap.csv";
pub const STATS_CSV: &str = "stats.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const REPS_DIR: &str = "reps";

/// Child-stream indices of the run seed. Task streams are offset by the
/// task's registry position so subsets reproduce the same encoders.
mod streams {
    pub const ARTIFACTS: u64 = 101;
    pub const TRAIN: u64 = 200;
    pub const CORRELATE: u64 = 300;
    pub const TCM: u64 = 400;
    pub const HOLDOUT: u64 = 500;
    pub const MULTILOSS: u64 = 600;
    pub const EVAL: u64 = 1000;
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} not found; {hint}",
            path.display()
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcmStageReport {
    pub fit: TcmFitReport,
    /// Ablation fits on the same split and initialization stream.
    pub ablations: Vec<TcmFitReport>,
    pub holdout: Vec<HoldoutReport>,
    /// Mean of the hold-out errors over all tasks.
    pub holdout_mean_rel_err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancedArtifact {
    pub representation: Representation,
    pub weights: MixWeights,
    pub objective_curve: Vec<f64>,
    /// `Cor(enhanced, t_j)` for every task column.
    pub correlation_row: Vec<f64>,
    pub arl: f64,
    /// Smallest ARL among the base tasks, for comparison.
    pub min_base_arl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub accuracy: Option<ProbeResult>,
    pub roc_auc: ProbeResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    /// sha256 of every artifact in the output directory, by relative path.
    pub files: BTreeMap<String, String>,
}

/// Loaded graph, frozen artifacts and the task evaluators of a run.
pub struct Context {
    pub cfg: RunConfig,
    pub graph: Graph,
    pub artifacts: FrozenArtifacts,
    pub evals: Vec<LossEvaluator>,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn rep_path(&self, task: &str) -> PathBuf {
        self.cfg.out_dir.join(REPS_DIR).join(format!("{task}.json"))
    }

    /// Representations of every configured task, from disk.
    pub fn load_reps(&self) -> Result<Vec<Representation>> {
        self.cfg
            .tasks
            .iter()
            .map(|t| {
                let r: Representation =
                    read_json(&self.rep_path(t.as_str()), "run the train stage first")?;
                if r.n_nodes() != self.graph.n_nodes() || r.dim() != self.cfg.embed_dim {
                    return Err(Error::MissingArtifact(format!(
                        "representation for `{t}` is {}x{}, expected {}x{}; rerun the train stage",
                        r.n_nodes(),
                        r.dim(),
                        self.graph.n_nodes(),
                        self.cfg.embed_dim
                    )));
                }
                Ok(r)
            })
            .collect()
    }

    pub fn load_correlation(&self) -> Result<CorrelationMatrix> {
        let cm: CorrelationMatrix =
            read_json(&self.out(COR_JSON), "run the correlate stage first")?;
        let expected: Vec<String> = self.cfg.tasks.iter().map(|t| t.to_string()).collect();
        if cm.tasks != expected {
            return Err(Error::MissingArtifact(format!(
                "{COR_JSON} covers {:?}, config lists {expected:?}; rerun the correlate stage",
                cm.tasks
            )));
        }
        Ok(cm)
    }

    fn eval_refs(&self) -> Vec<&LossEvaluator> {
        self.evals.iter().collect()
    }
}

/// Loads the graph and builds (or reloads) the frozen artifacts. Only the
/// train stage may create the artifact sidecar.
pub fn prepare(cfg: &RunConfig, create_artifacts: bool) -> Result<Context> {
    let graph = cfg.load_graph()?;
    let rng = cfg.root_rng().split(streams::ARTIFACTS);
    let sidecar = cfg
        .out_dir
        .join(FrozenArtifacts::sidecar_name(&graph.name, rng.seed()));
    let artifacts = if create_artifacts {
        let a = freeze_artifacts(&graph, &cfg.artifacts, &rng)?;
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        write_json(&sidecar, &a)?;
        a
    } else {
        read_json(&sidecar, "run the train stage first")?
    };
    let evals = cfg
        .tasks
        .iter()
        .map(|&t| build_target(t, &graph, &artifacts))
        .collect::<Result<_>>()?;
    Ok(Context {
        cfg: cfg.clone(),
        graph,
        artifacts,
        evals,
    })
}

fn task_stream(t: TaskId) -> u64 {
    streams::TRAIN
        + TaskId::ALL
            .iter()
            .position(|&x| x == t)
            .expect("registered task") as u64
}

pub fn stage_train(ctx: &Context) -> Result<Vec<Representation>> {
    let root = ctx.cfg.root_rng();
    let reps: Vec<Representation> = ctx
        .cfg
        .tasks
        .par_iter()
        .zip(&ctx.evals)
        .map(|(&t, ev)| {
            let arch = default_arch(t, ctx.cfg.embed_dim);
            let opts = &ctx.cfg.optimizers[&t];
            let trained = train_ssl(
                ev,
                &ctx.graph,
                &ctx.artifacts,
                &arch,
                opts,
                &root.split(task_stream(t)),
            )?;
            log::info!("trained {t}: final loss {:?}", trained.curve.last());
            Ok(trained.representation)
        })
        .collect::<Result<_>>()?;
    let dir = ctx.cfg.out_dir.join(REPS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for r in &reps {
        write_json(&ctx.rep_path(&r.task), r)?;
    }
    Ok(reps)
}

pub fn stage_correlate(ctx: &Context) -> Result<CorrelationMatrix> {
    let reps = ctx.load_reps()?;
    let mats: Vec<&Matrix> = reps.iter().map(|r| &r.matrix).collect();
    let cm = correlation_matrix(
        &mats,
        &ctx.eval_refs(),
        &ctx.cfg.correlation,
        &ctx.cfg.root_rng().split(streams::CORRELATE),
    )?;
    write_json(&ctx.out(COR_JSON), &cm)?;
    let mut csv = Vec::new();
    cm.write_csv(&mut csv)?;
    write_atomic(&ctx.out(COR_CSV), &csv)?;
    Ok(cm)
}

pub fn stage_tcm(ctx: &Context) -> Result<(TcmModel, TcmStageReport)> {
    let reps = ctx.load_reps()?;
    let cm = ctx.load_correlation()?;
    let mats: Vec<&Matrix> = reps.iter().map(|r| &r.matrix).collect();
    let rng = ctx.cfg.root_rng().split(streams::TCM);
    let (model, fit) = tcm_fit(&mats, &cm.values, &ctx.cfg.tcm, &rng)?;
    log::info!(
        "tcm {}: train rel err {:.4}, val {:?}",
        fit.variant.as_str(),
        fit.train_rel_err,
        fit.val_rel_err
    );
    let mut ablations = Vec::new();
    if ctx.cfg.tcm_diagnostics.ablations {
        for v in TcmVariant::ALL
            .into_iter()
            .filter(|&v| v != ctx.cfg.tcm.variant)
        {
            let cfg = TcmConfig {
                variant: v,
                ..ctx.cfg.tcm.clone()
            };
            ablations.push(tcm_fit(&mats, &cm.values, &cfg, &rng)?.1);
        }
    }
    let mut holdout = Vec::new();
    if ctx.cfg.tcm_diagnostics.holdout && mats.len() >= 3 {
        let hr = ctx.cfg.root_rng().split(streams::HOLDOUT);
        for i in 0..mats.len() {
            holdout.push(tcm_holdout(&mats, &cm.values, i, &ctx.cfg.tcm, &hr)?);
        }
    }
    let holdout_mean_rel_err = (!holdout.is_empty())
        .then(|| holdout.iter().map(|h| h.rel_err).sum::<f64>() / holdout.len() as f64);
    let report = TcmStageReport {
        fit,
        ablations,
        holdout,
        holdout_mean_rel_err,
    };
    write_json(&ctx.out(TCM_JSON), &model)?;
    write_json(&ctx.out(TCM_REPORT), &report)?;
    Ok((model, report))
}

pub fn stage_enhance(ctx: &Context) -> Result<EnhancedArtifact> {
    let reps = ctx.load_reps()?;
    let cm = ctx.load_correlation()?;
    let model: TcmModel = read_json(&ctx.out(TCM_JSON), "run the tcm stage first")?;
    let mats: Vec<&Matrix> = reps.iter().map(|r| &r.matrix).collect();
    let stats = cm.stats()?;
    let e = enhance(&model, &mats, &stats.atd, &ctx.cfg.enhance)?;
    let row = cm.extra_row(&e.embedding, &ctx.eval_refs())?;
    let arl = row.iter().sum::<f64>() / row.len() as f64;
    let min_base_arl = stats.arl.iter().copied().fold(f64::INFINITY, f64::min);
    log::info!("enhanced ARL {arl:.4} (lowest base ARL {min_base_arl:.4})");
    let art = EnhancedArtifact {
        representation: Representation {
            task: ENHANCED_TASK.into(),
            seed: ctx.cfg.seed,
            dataset: ctx.graph.name.clone(),
            matrix: e.embedding,
        },
        weights: e.weights,
        objective_curve: e.objective_curve,
        correlation_row: row,
        arl,
        min_base_arl,
    };
    write_json(&ctx.out(ENHANCED_JSON), &art)?;
    Ok(art)
}

/// Node-classification accuracy (when the graph has labels) and link
/// ROC-AUC of one representation over every evaluation seed.
pub fn evaluate_representation(ctx: &Context, method: &str, h: &Matrix) -> Result<MethodResult> {
    let ev = &ctx.cfg.eval;
    let root = ctx.cfg.root_rng().split(streams::EVAL);
    let mut acc = Vec::new();
    let mut auc = Vec::new();
    for &s in &ev.seeds {
        let r = root.split(s);
        if let Some(labels) = ctx.graph.labels() {
            let splits = split_nodes(&ctx.graph, ev.split, &mut r.split(0))?;
            acc.push(linear_probe_nodeclass(
                h,
                labels,
                &splits,
                &ev.probe,
                &r.split(1),
            )?);
        }
        auc.push(link_predict_auc(h, &ctx.artifacts, &ev.probe, &r.split(2))?);
    }
    Ok(MethodResult {
        method: method.to_string(),
        accuracy: if acc.is_empty() {
            None
        } else {
            Some(ProbeResult::from_seeds(Metric::Accuracy, acc)?)
        },
        roc_auc: ProbeResult::from_seeds(Metric::RocAuc, auc)?,
    })
}

pub fn stage_evaluate(ctx: &Context) -> Result<Vec<MethodResult>> {
    let reps = ctx.load_reps()?;
    let mut methods: Vec<(String, Matrix)> = reps
        .iter()
        .map(|r| (r.task.clone(), r.matrix.clone()))
        .collect();
    if ctx.cfg.eval.baselines {
        let refs: Vec<&Representation> = reps.iter().collect();
        methods.push(("addition".into(), baseline_addition(&refs)?.matrix));
        methods.push(("concat".into(), baseline_concat(&refs)?.matrix));
        if reps.len() >= 2 {
            let arch = EncoderArch::new(1, 1, ctx.cfg.embed_dim);
            let (rep, alpha) = baseline_multiloss(
                &ctx.eval_refs(),
                &ctx.graph,
                &ctx.artifacts,
                &arch,
                &ctx.cfg.eval.multiloss,
                &ctx.cfg.root_rng().split(streams::MULTILOSS),
            )?;
            log::info!("multiloss weights {alpha:?}");
            methods.push((rep.task, rep.matrix));
        }
    }
    let enhanced_path = ctx.out(ENHANCED_JSON);
    if enhanced_path.exists() {
        let e: EnhancedArtifact = read_json(&enhanced_path, "")?;
        methods.push((ENHANCED_TASK.into(), e.representation.matrix));
    } else {
        log::warn!(
            "{} missing; the enhanced representation is not evaluated",
            enhanced_path.display()
        );
    }
    let results: Vec<MethodResult> = methods
        .par_iter()
        .map(|(name, h)| evaluate_representation(ctx, name, h))
        .collect::<Result<_>>()?;
    let dataset = ctx.graph.name.clone();
    let rows: Vec<ResultRow> = results
        .iter()
        .flat_map(|m| {
            m.accuracy
                .iter()
                .chain(std::iter::once(&m.roc_auc))
                .map(|p| ResultRow::new(&m.method, &dataset, p))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut csv = Vec::new();
    write_results_csv(&rows, &mut csv)?;
    write_atomic(&ctx.out(RESULTS_CSV), &csv)?;
    write_json(&ctx.out(RESULTS_JSON), &results)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub atd: Vec<f64>,
    pub arl: Vec<f64>,
    pub atd_rank: Vec<usize>,
    pub arl_rank: Vec<usize>,
    pub degenerate_entries: usize,
    pub tcm_train_rel_err: Option<f64>,
    pub tcm_val_rel_err: Option<f64>,
    pub holdout_mean_rel_err: Option<f64>,
    pub enhanced_arl: Option<f64>,
}

/// Heatmap matrix, ATD/ARL table with ranks, and a JSON summary. Reads the
/// correlation matrix only; later-stage outputs are folded in when present.
pub fn emit_report(out_dir: &Path) -> Result<Summary> {
    let cm: CorrelationMatrix =
        read_json(&out_dir.join(COR_JSON), "run the correlate stage first")?;
    let mut heat = Vec::new();
    cm.write_csv(&mut heat)?;
    write_atomic(&out_dir.join(HEATMAP_CSV), &heat)?;

    let stats = cm.stats()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "atd", "arl"])?;
    for (i, t) in cm.tasks.iter().enumerate() {
        w.write_record([
            t.clone(),
            format!("{} ({})", stats.atd[i], stats.atd_rank[i]),
            format!("{} ({})", stats.arl[i], stats.arl_rank[i]),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("stats csv: {e}")))?;
    write_atomic(&out_dir.join(STATS_CSV), &bytes)?;

    let cfg: Option<RunConfig> = read_json(&out_dir.join(RESOLVED_CONFIG), "").ok();
    let tcm: Option<TcmStageReport> = read_json(&out_dir.join(TCM_REPORT), "").ok();
    let enhanced: Option<EnhancedArtifact> = read_json(&out_dir.join(ENHANCED_JSON), "").ok();
    let summary = Summary {
        dataset: cfg.as_ref().map(|c| c.dataset_name()).unwrap_or_default(),
        seed: cm.config.seed,
        tasks: cm.tasks.clone(),
        atd: stats.atd,
        arl: stats.arl,
        atd_rank: stats.atd_rank,
        arl_rank: stats.arl_rank,
        degenerate_entries: cm.degenerate.iter().filter(|&&d| d).count(),
        tcm_train_rel_err: tcm.as_ref().map(|t| t.fit.train_rel_err),
        tcm_val_rel_err: tcm.as_ref().and_then(|t| t.fit.val_rel_err),
        holdout_mean_rel_err: tcm.as_ref().and_then(|t| t.holdout_mean_rel_err),
        enhanced_arl: enhanced.map(|e| e.arl),
    };
    write_json(&out_dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

/// Recomputes checksums of every artifact under the output directory.
pub fn write_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let config_bytes = serde_json::to_vec(cfg)?;
    let mut files = BTreeMap::new();
    let mut stack = vec![cfg.out_dir.clone()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(&cfg.out_dir).unwrap_or(&path);
            let key = rel.to_string_lossy().replace('\\', "/");
            if key == MANIFEST_JSON || key.ends_with(".tmp") {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.insert(key, sha256_hex(&bytes));
        }
    }
    let manifest = Manifest {
        config_sha256: sha256_hex(&config_bytes),
        seed: cfg.seed,
        files,
    };
    write_json(&cfg.out_dir.join(MANIFEST_JSON), &manifest)?;
    Ok(manifest)
}

/// Runs the requested stages in pipeline order, then refreshes the manifest.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Config("no stages requested".into()));
    }
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join(RESOLVED_CONFIG), cfg)?;
    let needs_ctx = stages.iter().any(|&s| s != Stage::Report);
    let ctx = if needs_ctx {
        Some(prepare(cfg, stages.contains(&Stage::Train))?)
    } else {
        None
    };
    for stage in stages {
        log::info!("stage {stage}");
        let ctx = ctx.as_ref();
        match stage {
            Stage::Train => stage_train(ctx.expect("context"))?.len(),
            Stage::Correlate => stage_correlate(ctx.expect("context"))?.k(),
            Stage::Tcm => stage_tcm(ctx.expect("context"))?.1.ablations.len(),
            Stage::Enhance => stage_enhance(ctx.expect("context"))?.correlation_row.len(),
            Stage::Evaluate => stage_evaluate(ctx.expect("context"))?.len(),
            Stage::Report => emit_report(&cfg.out_dir)?.tasks.len(),
        };
    }
    write_manifest(cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_list_parses_in_pipeline_order() {
        let v = parse_stage_list("report, train,tcm,train").unwrap();
        assert_eq!(v, vec![Stage::Train, Stage::Tcm, Stage::Report]);
        assert!(parse_stage_list("train,fly").unwrap_err().is_usage());
    }
}
