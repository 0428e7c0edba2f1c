use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kds::cli::{load_config, run_command, Command, RunConfig};
use kds::{KdsError, Result};

/// Numerical lab for Dirac fields on extreme Kerr-de Sitter black holes.
#[derive(Parser, Debug)]
#[command(name = "kds", version)]
struct Args {
    /// One of geometry, angular, evolve1d, scatter1d, evolve2d, chain, verify.
    command: Command,
    /// Config file of `key = value` lines under `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to KDS_THREADS, then `run.threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for packet jitter and randomized checks; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn threads(flag: Option<usize>, cfg: &RunConfig) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("KDS_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| {
            KdsError::Validation(vec![format!(
                "KDS_THREADS=`{v}` is not a non-negative integer"
            )])
        }),
        Err(_) => Ok(cfg.run.threads),
    }
}

fn run(args: Args) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    let n = threads(args.threads, &cfg)?;
    cfg.run.threads = n;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| KdsError::Validation(vec![format!("thread pool: {e}")]))?;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.run.out.clone());
    let m = run_command(args.command, &cfg, &out)?;
    for inv in m.invariants.iter().filter(|i| !i.pass) {
        eprintln!("FAILED {}: {}", inv.name, inv.detail);
    }
    println!("{} -> {}", m.command, out.join("manifest.json").display());
    Ok(m.passed())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
