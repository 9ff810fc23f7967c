use clap::{Parser, Subcommand};
use poolcast::cli::{self, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Estimation and evaluation of distributional forecast combinations under
/// proper scoring rules.
#[derive(Parser)]
#[command(name = "poolcast", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo replication pipeline: references, harness, summaries.
    Replicate(CommonArgs),
    /// Fixed-window estimation with Gaussian parameter-draw uncertainty.
    Empirical(CommonArgs),
    /// Compute and cache large-sample reference optima and the DGP benchmark.
    Reference(CommonArgs),
    /// Fixed-window estimation and a scores table, nothing else.
    Score(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Validate and print the plan without running.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and POOLCAST_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &CommonArgs) -> Result<RunConfig, poolcast::Error> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.run.threads = threads;
    }
    if let Some(out) = &common.out {
        cfg.run.out_dir = Some(out.clone());
    }
    poolcast::par::configure_threads(cfg.run.threads);
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (common, run): (&CommonArgs, fn(&RunConfig, bool) -> _) = match &args.command {
        Command::Replicate(c) => (c, cli::cmd_replicate),
        Command::Empirical(c) => (c, cli::cmd_empirical),
        Command::Reference(c) => (c, cli::cmd_reference),
        Command::Score(c) => (c, cli::cmd_score),
    };
    let cfg = match load(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg, common.dry_run) {
        Ok(out_dir) => {
            if !common.dry_run {
                println!("results written to {}", out_dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
