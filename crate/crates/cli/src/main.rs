use std::path::PathBuf;
use std::process::ExitCode;

use abinitio_cli::{config, execute, ExperimentKind, Outcome, OUT_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abinitio", version, about = "Fit, train and evaluate MCMC proposals with Ab Initio objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed (TOML integers stop at 2^63 - 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads for replicates and chains.
    #[arg(long)]
    workers: Option<usize>,
    /// Output root; a run directory is created inside it.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Ab Initio coefficient A to a reference acceptance rate.
    FitCoefficient(RunArgs),
    /// Train replicates and report acceptance and MSJD from single proposals.
    Verify(RunArgs),
    /// Train replicates and measure chains (acceptance, MSJD, ESS, score).
    Optimize(RunArgs),
    /// Measure a fixed or checkpointed proposal.
    Evaluate(RunArgs),
    /// Write proposal density grids around anchor points of a 2-D proposal.
    DensityGrid(RunArgs),
    /// Train and rank several schemes on one target.
    SchemeCompare(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::FitCoefficient(a) => (ExperimentKind::FitCoefficient, a),
        Command::Verify(a) => (ExperimentKind::Verify, a),
        Command::Optimize(a) => (ExperimentKind::Optimize, a),
        Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
        Command::DensityGrid(a) => (ExperimentKind::DensityGrid, a),
        Command::SchemeCompare(a) => (ExperimentKind::SchemeCompare, a),
    };
    let mut cfg = match config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if cfg.experiment != kind {
        eprintln!("{}: invalid config at `experiment`: expected \"{}\", found \"{}\"", args.config.display(), kind.as_str(), cfg.experiment.as_str());
        return ExitCode::from(2);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{}: {e}", args.config.display());
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
        eprintln!("cannot start {} workers: {e}", cfg.workers);
        return ExitCode::FAILURE;
    }
    let out = args.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    match execute(&cfg, &out) {
        Ok(Outcome::Complete(dir)) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(dir, e)) => {
            eprintln!("run failed: {e:#}\npartial artifacts in {}", dir.display());
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("run failed: {e:#}");
            ExitCode::FAILURE
        }
    }
}
