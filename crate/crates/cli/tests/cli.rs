use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn taskcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskcorr"))
        .args(args)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn run_four(out: &Path) -> Output {
    taskcorr(&[
        "--seed",
        "3",
        "--tasks",
        "nodeprop,edgemask,attributemask,gae",
        "--out",
        out.to_str().unwrap(),
        "run",
    ])
}

#[test]
fn full_run_writes_every_artifact_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run_four(&a);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "cor.json",
        "cor.csv",
        "tcm.json",
        "tcm_report.json",
        "enhanced.json",
        "results.csv",
        "results.json",
        "cor_heatmap.csv",
        "stats.csv",
        "summary.json",
        "manifest.json",
        "resolved_config.json",
    ] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_dir(a.join("reps")).unwrap().count(), 4);
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with("method,dataset,metric,mean,std,n_seeds"));
    assert!(results.contains("tcm-enhanced,synthetic-sbm,accuracy"));

    assert!(run_four(&b).status.success());
    for f in ["cor.json", "tcm.json", "enhanced.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn correlate_without_representations_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = taskcorr(&[
        "--seed",
        "0",
        "--out",
        tmp.path().to_str().unwrap(),
        "correlate",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn unknown_task_lists_the_valid_ids() {
    let out = taskcorr(&["--seed", "0", "--tasks", "grace", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grace") && err.contains("nodeprop"), "{err}");
}

#[test]
fn missing_seed_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = taskcorr(&["--out", tmp.path().to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_bounds_prints_passing_reports() {
    let out = taskcorr(&["verify-bounds", "--trials", "20"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports
        .iter()
        .all(|r| r["failures"].as_array().unwrap().is_empty()));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = taskcorr(&["verify-bounds", "--suite", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}
