use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;
use taskcorr::numeric::Rng;
use taskcorr::pipeline::{emit_report, parse_stage_list, run_pipeline, RunConfig, Stage};
use taskcorr::tasks::parse_task_list;
use taskcorr::verify::{run_suite, SuiteName};
use taskcorr::{Error, Result};

/// Task-correlation pipeline: train SSL encoders, measure cross-task
/// correlations, fit the correlation model, enhance and evaluate.
#[derive(Parser, Debug)]
#[command(name = "taskcorr", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated task ids (overrides the config).
    #[arg(long, global = true)]
    tasks: Option<String>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one encoder per task and freeze the task artifacts.
    Train,
    /// Compute the k×k correlation matrix from saved representations.
    Correlate,
    /// Fit the correlation model (plus ablations and hold-out fits).
    Tcm,
    /// Train the mixed representation against the fitted model.
    Enhance,
    /// Linear-probe evaluation of every representation and baseline.
    Evaluate,
    /// Heatmap CSV, ATD/ARL table and summary from a correlation matrix.
    Report,
    /// Run several stages in order.
    Run {
        /// Comma-separated stages; all of them by default.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Randomized bound and oracle suites; prints JSON reports.
    VerifyBounds {
        /// Suites to run (comma-separated); bounds34,bounds35 by default.
        #[arg(long)]
        suite: Option<String>,
        /// Trials per suite; 200 for bounds34 and 100 otherwise by default.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut v = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    if let Some(seed) = cli.seed {
        obj.insert("seed".into(), seed.into());
    }
    if let Some(tasks) = &cli.tasks {
        let ids: Vec<String> = parse_task_list(tasks)?
            .iter()
            .map(|t| t.to_string())
            .collect();
        obj.insert("tasks".into(), ids.into());
    }
    if let Some(out) = &cli.out {
        obj.insert("out_dir".into(), out.to_string_lossy().into_owned().into());
    }
    let cfg = RunConfig::from_value(v)?;
    log::info!("resolved config: {}", serde_json::to_string(&cfg)?);
    Ok(cfg)
}

fn verify(cli: &Cli, suite: Option<&str>, trials: Option<usize>) -> Result<bool> {
    let names: Vec<SuiteName> = match suite {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?,
        None => vec![SuiteName::Bounds34, SuiteName::Bounds35],
    };
    let rng = Rng::new(cli.seed.unwrap_or(0));
    let mut reports = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let n = trials.unwrap_or(if name == SuiteName::Bounds34 {
            200
        } else {
            100
        });
        reports.push(run_suite(name, n, &rng.split(i as u64))?);
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(reports.iter().all(|r| r.passed()))
}

fn report_only(cli: &Cli) -> Result<()> {
    match load_config(cli) {
        Ok(cfg) => run_pipeline(&cfg, &[Stage::Report]),
        // the report needs only the correlation matrix on disk
        Err(Error::Config(msg)) if cli.config.is_none() && msg.contains("seed") => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            emit_report(Path::new(&out)).map(|_| ())
        }
        Err(e) => Err(e),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let single = |s: Stage| -> Result<bool> {
        run_pipeline(&load_config(cli)?, &[s])?;
        Ok(true)
    };
    match &cli.command {
        Command::Train => single(Stage::Train),
        Command::Correlate => single(Stage::Correlate),
        Command::Tcm => single(Stage::Tcm),
        Command::Enhance => single(Stage::Enhance),
        Command::Evaluate => single(Stage::Evaluate),
        Command::Report => report_only(cli).map(|_| true),
        Command::Run { stages } => {
            let stages = match stages {
                Some(s) => parse_stage_list(s)?,
                None => Stage::ALL.to_vec(),
            };
            run_pipeline(&load_config(cli)?, &stages)?;
            Ok(true)
        }
        Command::VerifyBounds { suite, trials } => verify(cli, suite.as_deref(), *trials),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            LevelFilter::Warn
        } else {
            LevelFilter::Info
        })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification suite reported failures");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
