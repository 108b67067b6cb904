//! `shelab` command-line front-end.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 configuration or
//! usage error, 3 numerical instability.

mod commands;
mod config;

use anyhow::Context;
use clap::Parser;
use commands::Outcome;
use config::{Command, ConfigError, ExperimentConfig};
use serde::Serialize;
use shelab::Execution;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Parser)]
#[command(name = "shelab", version, about = "Stochastic heat equation laboratory")]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long, env = "SHELAB_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "SHELAB_WORKERS")]
    workers: Option<usize>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `command`.
    #[arg(long, value_enum)]
    command: Option<Command>,
}

#[derive(Serialize)]
struct RunMetadata {
    command: &'static str,
    version: &'static str,
    workers: usize,
    started_unix_s: u64,
    elapsed_s: f64,
    exit_code: u8,
    error: Option<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<shelab::Error>() {
        return match e {
            shelab::Error::Instability { .. } | shelab::Error::Quadrature { .. } => 3,
            _ => 2,
        };
    }
    2
}

fn run(cfg: &ExperimentConfig, command: Command, exec: Execution) -> anyhow::Result<Outcome> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("resolved.toml"), cfg.to_toml())?;
    match command {
        Command::Kernel => commands::kernel(cfg, out),
        Command::Phi => commands::phi(cfg, out),
        Command::Simulate => commands::simulate(cfg, out, exec),
        Command::Verify => commands::verify(cfg, out, exec),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    let Some(command) = args.command.or(cfg.command) else {
        eprintln!("error: {}", ConfigError("no command given (`--command` or `command` key)".into()));
        return ExitCode::from(2);
    };
    cfg.command = Some(command);

    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        eprintln!("error: --workers must be positive");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    let exec = if workers == 1 { Execution::Sequential } else { Execution::Parallel };

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let result = run(&cfg, command, exec);
    let (code, error) = match &result {
        Ok(Outcome::Pass) => (0, None),
        Ok(Outcome::Fail) => (1, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (exit_code(e), Some(format!("{e:#}")))
        }
    };
    let meta = RunMetadata {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        workers,
        started_unix_s: started,
        elapsed_s: clock.elapsed().as_secs_f64(),
        exit_code: code,
        error,
    };
    if cfg.out_dir.is_dir() {
        if let Err(e) = commands::write_json(&cfg.out_dir.join("run_metadata.json"), &meta) {
            eprintln!("warning: {e:#}");
        }
    }
    match result {
        Ok(Outcome::Pass) => println!("{}: pass", command.name()),
        Ok(Outcome::Fail) => println!("{}: FAIL", command.name()),
        Err(_) => {}
    }
    ExitCode::from(code)
}
