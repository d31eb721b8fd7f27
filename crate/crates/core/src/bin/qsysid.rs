use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use qsysid::model::Quadrature;
use qsysid::pipeline::{self, PipelineConfig, Report, SolverChoice};
use qsysid::Result;

/// Identify physically realizable linear quantum models from homodyne records.
#[derive(Parser)]
#[command(name = "qsysid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (JSON); defaults to the reference cavity experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Projection solver.
    #[arg(long, global = true, value_parser = ["lifted", "reduced", "both"])]
    solver: Option<String>,

    /// Restrict to one measured quadrature.
    #[arg(long, global = true, value_parser = ["q", "p"])]
    quadrature: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate measurement records.
    Simulate,
    /// Classical subspace estimates and projected quantum models.
    Identify {
        /// Record CSV files; defaults to every configured record.
        records: Vec<PathBuf>,
    },
    /// Validation metrics and plot data.
    Validate {
        /// A model JSON and a record CSV; defaults to every identified model.
        #[arg(num_args = 2, value_names = ["MODEL", "RECORD"])]
        pair: Vec<PathBuf>,
    },
    /// Aggregate metrics into per-quadrature tables.
    Table,
    /// simulate, identify, validate and table in one go.
    Pipeline,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(s) = &cli.solver {
        cfg.solver = s.parse::<SolverChoice>()?;
    }
    if let Some(q) = &cli.quadrature {
        cfg.quadratures = vec![q.parse::<Quadrature>()?];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<Report> {
    match &cli.command {
        Command::Simulate => pipeline::cmd_simulate(cfg),
        Command::Identify { records } if records.is_empty() => pipeline::cmd_identify(cfg),
        Command::Identify { records } => pipeline::cmd_identify_records(cfg, records),
        Command::Validate { pair } if pair.is_empty() => pipeline::cmd_validate(cfg),
        Command::Validate { pair } => {
            let stem = pair[0].file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let metrics = cfg.out.join("metrics").join(format!("{stem}.json"));
            pipeline::validate_one(cfg, &pair[0], &pair[1], &metrics)
        }
        Command::Table => pipeline::cmd_table(cfg),
        Command::Pipeline => pipeline::run_pipeline(cfg),
    }
}

fn write_diagnostics(out: &Path, value: &serde_json::Value) -> Option<PathBuf> {
    std::fs::create_dir_all(out).ok()?;
    let path = out.join("diagnostics.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).ok()? + "\n").ok()?;
    Some(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(report) if report.failures.is_empty() => {
            eprintln!("wrote {} files under {}", report.written.len(), cfg.out.display());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            for f in &report.failures {
                eprintln!("failed: {} ({}): {}", f.item, f.kind, f.message);
            }
            let diag = json!({ "status": "numerical_failure", "failures": report.failures, "written": report.written.len() });
            if let Some(p) = write_diagnostics(&cfg.out, &diag) {
                eprintln!("diagnostics: {}", p.display());
            }
            ExitCode::from(3)
        }
        Err(e) if e.is_numerical() => {
            eprintln!("numerical failure: {e}");
            let diag = json!({ "status": "numerical_failure", "failures": [{ "item": "run", "kind": e.kind(), "message": e.to_string() }] });
            if let Some(p) = write_diagnostics(&cfg.out, &diag) {
                eprintln!("diagnostics: {}", p.display());
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
