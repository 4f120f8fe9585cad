use std::fs;
use std::path::Path;

use taskcorr::correlation::CorrelationMatrix;
use taskcorr::numeric::{Matrix, Rng};
use taskcorr::pipeline::{
    emit_report, run_pipeline, Manifest, RunConfig, Stage, COR_JSON, MANIFEST_JSON, REPS_DIR,
    STATS_CSV,
};
use taskcorr::tasks::TaskId;
use taskcorr::verify::{run_suite, run_trial, SuiteName};
use taskcorr::Error;

fn three_task_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_value(serde_json::json!({
        "seed": 11,
        "tasks": ["nodeprop", "edgemask", "attributemask"],
        "eval": {"seeds": [0, 1]},
    }))
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn staged_run_matches_a_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = three_task_config(&tmp.path().join("whole"));
    run_pipeline(&whole, &Stage::ALL).unwrap();
    let staged = three_task_config(&tmp.path().join("staged"));
    for s in Stage::ALL {
        run_pipeline(&staged, &[s]).unwrap();
    }
    for f in [COR_JSON, "tcm.json", "enhanced.json", "results.csv"] {
        assert_eq!(
            fs::read(whole.out_dir.join(f)).unwrap(),
            fs::read(staged.out_dir.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::read_dir(whole.out_dir.join(REPS_DIR)).unwrap().count(),
        3
    );

    let manifest: Manifest =
        serde_json::from_slice(&fs::read(whole.out_dir.join(MANIFEST_JSON)).unwrap()).unwrap();
    assert!(manifest.files.keys().any(|k| k.ends_with(COR_JSON)));
    assert_eq!(manifest.seed, 11);

    let stats = fs::read_to_string(whole.out_dir.join(STATS_CSV)).unwrap();
    assert_eq!(stats.lines().count(), 4);
}

#[test]
fn later_stage_without_inputs_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = three_task_config(tmp.path());
    let e = run_pipeline(&cfg, &[Stage::Correlate]).unwrap_err();
    assert!(matches!(e, Error::MissingArtifact(_)), "{e}");
    assert!(e.is_usage());
}

#[test]
fn uniform_matrix_ranks_follow_task_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = three_task_config(tmp.path());
    run_pipeline(&cfg, &[Stage::Train, Stage::Correlate]).unwrap();
    let path = tmp.path().join(COR_JSON);
    let mut cm: CorrelationMatrix = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    cm.values = Matrix::filled(3, 3, 1.0);
    fs::write(&path, serde_json::to_vec(&cm).unwrap()).unwrap();
    let summary = emit_report(tmp.path()).unwrap();
    assert_eq!(summary.atd_rank, vec![1, 2, 3]);
    assert_eq!(summary.arl_rank, vec![1, 2, 3]);
    assert_eq!(summary.atd, vec![1.0; 3]);
}

#[test]
fn config_overrides_apply_to_named_tasks() {
    let cfg = RunConfig::from_value(serde_json::json!({
        "seed": 2,
        "tasks": ["gae"],
        "optimizers": {"gae": {"kind": "sgd", "learning_rate": 0.1, "epochs": 7}},
    }))
    .unwrap();
    assert_eq!(cfg.optimizers[&TaskId::Gae].epochs, 7);
    assert_eq!(cfg.optimizers.len(), 1);
}

#[test]
fn verification_suites_pass() {
    for (name, trials) in [
        (SuiteName::Bounds34, 40),
        (SuiteName::Bounds35, 20),
        (SuiteName::AucOracle, 20),
        (SuiteName::PcaOracle, 20),
        (SuiteName::LstsqOracle, 20),
        (SuiteName::Gradients, 10),
        (SuiteName::AblationOrder, 3),
        (SuiteName::Determinism, 1),
    ] {
        let r = run_suite(name, trials, &Rng::new(40)).unwrap();
        assert!(r.passed(), "{name}: {:?}", r.failures);
        assert_eq!(r.cases, trials);
    }
}

#[test]
fn a_single_trial_replays() {
    let seed = Rng::new(5).split(3).seed();
    assert_eq!(run_trial(SuiteName::Gradients, seed), None);
}
