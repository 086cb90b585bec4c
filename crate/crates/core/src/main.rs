use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use defersim::pipeline::{Pipeline, RunConfig, Stage};
use defersim::{Error, Result};

#[derive(Parser)]
#[command(name = "defersim", version, about = "Capacity-aware learning-to-defer simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and referenced files.
    ValidateConfig(Common),
    /// Fit or load scores, pick the threshold and synthesize the expert team.
    GenExperts(Common),
    /// Draw batch vectors and capacity matrices for the scenario grid.
    GenScenarios(Common),
    /// Fit the outcome model and run every policy on every scenario.
    RunPolicies(Common),
    /// Aggregate runs into the summary tables.
    Report(Common),
    /// All stages in order.
    Run(Common),
}

fn execute(stage: Stage, args: &Common) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if args.workers == Some(0) {
        return Err(Error::Config("--workers must be >= 1".into()));
    }
    let pipeline = Pipeline::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| pipeline.execute(stage))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (stage, args) = match &cli.command {
        Command::ValidateConfig(a) => (Stage::ValidateConfig, a),
        Command::GenExperts(a) => (Stage::GenExperts, a),
        Command::GenScenarios(a) => (Stage::GenScenarios, a),
        Command::RunPolicies(a) => (Stage::RunPolicies, a),
        Command::Report(a) => (Stage::Report, a),
        Command::Run(a) => (Stage::Run, a),
    };
    match execute(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
