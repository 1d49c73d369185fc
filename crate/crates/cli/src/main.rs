use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ifam_core::Method;
use ifam_lab::commands;
use ifam_lab::{CliError, ExperimentConfig, Mode, Overrides};

#[derive(Parser)]
#[command(name = "ifam-lab", version = ifam_lab::manifest::VERSION, about = "Group detection and Double-POET experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one panel from the simulation design
    Simulate(Args),
    /// Detect groups in a returns CSV
    Cluster(Args),
    /// Double-POET covariance and minimum-variance weights
    Estimate(Args),
    /// Rolling out-of-sample portfolio backtest
    Backtest(Args),
    /// Monte Carlo tables over replications
    Experiment(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Ground-truth labels CSV (asset_id,group) for ARI
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Returns CSV
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fixed labels CSV (asset_id,group)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Sector map CSV (asset_id,sector)
    #[arg(long)]
    sectors: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: ifam_core::Error| e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("IFAM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("IFAM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (mode, a) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Cluster(a) => (Mode::Cluster, a),
        Command::Estimate(a) => (Mode::Estimate, a),
        Command::Backtest(a) => (Mode::Backtest, a),
        Command::Experiment(a) => (Mode::Experiment, a),
    };
    let cfg = ExperimentConfig::load(&a.config)?.resolve(
        mode,
        Overrides {
            seed: a.seed,
            output_dir: a.out,
            method: a.method,
            truth_csv: a.truth,
            input_csv: a.input,
            labels_csv: a.labels,
            sectors_csv: a.sectors,
            replications: a.replications,
        },
    )?;
    let m = commands::run(&cfg)?;
    log::info!("{} finished in {:.1}s", m.command, m.wall_time_seconds);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ifam-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
