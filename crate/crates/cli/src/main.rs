//! `polybill`: batch experiments on polygonal billiards with contracting
//! reflection laws.
//!
//! Exit codes: 0 success, 2 invalid config or failed validation, 3 numeric
//! or I/O failure.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::ExperimentConfig;
use run::{CliError, Command};

#[derive(Debug, Parser)]
#[command(name = "polybill", version, about)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV artifacts.
    #[arg(long, default_value = "polybill-out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn execute(args: &Args) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|(path, msg)| CliError::Config { path, msg })?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    run::run(args.command, &cfg, &args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            let body = serde_json::json!({
                "schema_version": run::SCHEMA_VERSION,
                "error": e.to_string(),
                "exit_code": code,
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
            eprintln!("polybill: {e}");
            ExitCode::from(code as u8)
        }
    }
}
