//! Command-line entry point: run named experiments, evaluate the report,
//! list what can be run.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error,
//! 3 every seed diverged, 4 report criterion failed under --strict.

use clap::{Parser, Subcommand};
use sranklab::experiment::{
    evaluate, load_traces, run, ExperimentConfig, ExperimentError, ALL_EXPERIMENTS,
};
use std::path::PathBuf;

/// Default output root when neither --out nor SRANKLAB_OUT is set.
const DEFAULT_OUT: &str = "traces";
const OUT_ENV: &str = "SRANKLAB_OUT";

#[derive(Parser)]
#[command(name = "sranklab", about = "Effective-rank experiments for bootstrapped value learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config file and write one CSV trace per seed.
    Run {
        /// Path to a flat key=value config file.
        config: PathBuf,
        /// Override a config entry, e.g. --set train.batch_size=64.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (default: $SRANKLAB_OUT, then ./traces).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the directional criteria over a directory of traces.
    Report {
        dir: PathBuf,
        /// Emit machine-readable JSON instead of the text table.
        #[arg(long)]
        json: bool,
        /// Exit with code 4 if any evaluated criterion fails.
        #[arg(long)]
        strict: bool,
    },
    /// List experiment names with their parameter defaults.
    ListExperiments,
}

fn main() {
    std::process::exit(execute(Cli::parse()));
}

fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, set, out } => cmd_run(&config, &set, out),
        Command::Report { dir, json, strict } => cmd_report(&dir, json, strict),
        Command::ListExperiments => {
            for kind in ALL_EXPERIMENTS {
                println!("{kind}");
                for (key, default) in kind.schema() {
                    println!("  {key} = {default}");
                }
            }
            0
        }
    }
}

fn error_code(err: &ExperimentError) -> i32 {
    match err {
        ExperimentError::Config(_) => 2,
        ExperimentError::AllSeedsDiverged => 3,
        _ => 1,
    }
}

fn cmd_run(config: &PathBuf, overrides: &[String], out: Option<PathBuf>) -> i32 {
    let text = match std::fs::read_to_string(config) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", config.display());
            return 2;
        }
    };
    let cfg = match ExperimentConfig::parse(&text, overrides) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return 2;
        }
    };
    let out_dir = out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match run(&cfg, &out_dir) {
        Ok(outcome) => {
            for path in &outcome.files {
                println!("{}", path.display());
            }
            if !outcome.diverged_seeds.is_empty() {
                eprintln!("diverged seeds: {:?}", outcome.diverged_seeds);
            }
            if outcome.all_diverged() {
                eprintln!("error: {}", ExperimentError::AllSeedsDiverged);
                3
            } else {
                0
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            error_code(&err)
        }
    }
}

fn cmd_report(dir: &PathBuf, json: bool, strict: bool) -> i32 {
    let traces = match load_traces(dir) {
        Ok(traces) => traces,
        Err(err) => {
            eprintln!("error: {err}");
            return error_code(&err);
        }
    };
    let report = evaluate(&traces);
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render());
    }
    if strict && report.has_failure() {
        4
    } else {
        0
    }
}
