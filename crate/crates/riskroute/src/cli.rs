//! Command-line front end: one subcommand per pipeline stage plus the
//! verification suite.
//!
//! Exit codes are stable: 0 success, 1 verification failure or other
//! runtime error, 2 invalid configuration or arguments, 3 missing file,
//! 4 hash mismatch, 5 malformed artifact.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{
    run_pipeline, stage_calibrate, stage_gen_data, stage_sweep, stage_train_gate,
    stage_train_teacher, PipelinePaths,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_HASH_MISMATCH: i32 = 4;
pub const EXIT_MALFORMED: i32 = 5;

#[derive(Parser)]
#[command(
    name = "riskroute",
    about = "Two-stage device-edge LLM router with conformal risk control",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding all artifacts.
    #[arg(long, global = true, default_value = "runs/desk")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic routing dataset.
    GenData,
    /// Train the per-model teacher heads.
    TrainTeacher,
    /// Distill the teacher margin sign into the deployable gate.
    TrainGate,
    /// Calibrate the threshold table on the calibration split.
    Calibrate,
    /// Evaluate the calibrated sweep, baselines, and Pareto envelope.
    Sweep,
    /// Run every stage in order.
    Run,
    /// Run the acceptance criteria and print one line per criterion.
    Verify,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => EXIT_INVALID_CONFIG,
        Error::MissingFile(_) => EXIT_MISSING_FILE,
        Error::HashMismatch { .. } => EXIT_HASH_MISMATCH,
        Error::MalformedArtifact { .. } => EXIT_MALFORMED,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = resolve_config(cli)?;
    let paths = PipelinePaths::new(&cli.out);
    match cli.command {
        Command::GenData => {
            let p = stage_gen_data(&cfg, &paths)?;
            println!("dataset written to {}", p.display());
        }
        Command::TrainTeacher => {
            let p = stage_train_teacher(&cfg, &paths)?;
            println!("teacher checkpoint written to {}", p.display());
        }
        Command::TrainGate => {
            let p = stage_train_gate(&cfg, &paths)?;
            println!("gate checkpoint written to {}", p.display());
        }
        Command::Calibrate => {
            let p = stage_calibrate(&cfg, &paths)?;
            println!("threshold table written to {}", p.display());
        }
        Command::Sweep => {
            let p = stage_sweep(&cfg, &paths)?;
            println!("sweep tables written next to {}", p.display());
        }
        Command::Run => {
            run_pipeline(&cfg, &paths)?;
            println!("pipeline complete in {}", paths.root.display());
        }
        Command::Verify => {
            let results = crate::verify::run_all(&cfg, &paths)?;
            let mut all_pass = true;
            for r in &results {
                println!("{}", r.line());
                all_pass &= r.pass;
            }
            if !all_pass {
                return Ok(EXIT_RUNTIME);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses arguments from the process environment and runs one command.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
