//! `omt-term`: batch front end for the pricing/verification engine.
//!
//! ```text
//! omt-term run <config.json> --out <dir> [--set key.path=value]... [--threads N]
//! omt-term schema
//! ```
//!
//! Exit codes: 0 all assertions pass, 1 assertion failure, 2 config error,
//! 3 numerical failure.

mod config;
mod output;
mod schema;
mod tasks;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{apply_override, RunConfig};
use tasks::{run_task, RunError};

#[derive(Parser)]
#[command(name = "omt-term", about = "Term-structure pricing and verification engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task from a JSON configuration.
    Run {
        /// Path to the configuration file.
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path overrides, e.g. `--set mc.seed=7`.
        #[arg(long = "set")]
        set: Vec<String>,
        /// Worker threads for path simulation (default: all cores).
        /// Never affects outputs, only resource usage.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the configuration JSON schema.
    Schema,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Schema => {
            print!("{}", schema::schema_text());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            set,
            threads,
        } => match run(config, out, set, threads) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(RunError::Config(msg)) => {
                eprintln!("config error: {msg}");
                ExitCode::from(2)
            }
            Err(RunError::Numerical(msg)) => {
                eprintln!("numerical failure: {msg}");
                ExitCode::from(3)
            }
            Err(RunError::Io(msg)) => {
                eprintln!("io error: {msg}");
                ExitCode::from(2)
            }
        },
    }
}

fn run(
    config_path: PathBuf,
    out_dir: PathBuf,
    overrides: Vec<String>,
    threads: Option<usize>,
) -> Result<bool, RunError> {
    let text = fs::read_to_string(&config_path)
        .map_err(|e| RunError::Config(format!("{}: {e}", config_path.display())))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RunError::Config(e.to_string()))?;
    for assignment in &overrides {
        apply_override(&mut doc, assignment)?;
    }
    let cfg = RunConfig::from_value(&doc)?;
    let resolved = cfg.resolve()?;

    if let Some(n) = threads {
        omt_core::simulate::set_default_threads(n);
    }
    fs::create_dir_all(out_dir.join("plotdata"))?;

    // hash of the effective configuration (after overrides), canonical form
    let canonical = serde_json::to_string(&doc).map_err(|e| RunError::Config(e.to_string()))?;
    let inputs_hash = hex_digest(canonical.as_bytes());

    let outcome = run_task(&resolved, &out_dir)?;
    let pass = output::write_summary(
        &out_dir.join("summary.json"),
        resolved.task.name(),
        &inputs_hash,
        outcome.headline,
        &outcome.assertions,
    )?;
    for a in &outcome.assertions {
        println!(
            "{} {}: {}",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }
    Ok(pass)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
