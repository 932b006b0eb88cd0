use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fleetwatch_core::{BetaPolicy, ClusterKey, Timestamp};

mod commands;
mod output;

/// Campaign-fleet anomaly detection: simulate, detect, evaluate, export, report.
#[derive(Debug, Parser)]
#[command(name = "fleetwatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic portfolio, its traffic store and ground truth.
    Simulate(SimulateArgs),
    /// Select stable campaigns, build change metrics and label them.
    Detect(DetectArgs),
    /// Score detect output against a truth file.
    Eval(EvalArgs),
    /// Write change metrics, bounds and labels as put lines.
    Export(ExportArgs),
    /// Compare change-metric dispersion of stable-only and all campaigns.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "FLEETWATCH_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set delta=0.85`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file; the built-in four-incident scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace an existing store in the output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Directory written by `simulate` (needs `portfolio.csv` and `store/`).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// When to shrink beta.
    #[arg(long, value_parser = parse_beta_policy)]
    beta_policy: Option<BetaPolicy>,
    /// Monitor mode: refresh the stable set at this epoch second, ignore
    /// later data, and exit 1 if the newest hour of any cluster is anomalous.
    #[arg(long)]
    now: Option<Timestamp>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `detect`.
    #[arg(long)]
    labels: PathBuf,
    /// Truth CSV written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Only score these clusters, e.g. `channel:display`. Repeatable.
    #[arg(long)]
    cluster: Vec<ClusterKey>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory written by `detect`.
    #[arg(long)]
    run: PathBuf,
    /// Also append the lines to a file store at this directory.
    #[arg(long)]
    store: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `detect`.
    #[arg(long)]
    run: PathBuf,
    /// Truth CSV; its hours and their echoes are left out of the comparison.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Only report these clusters. Repeatable.
    #[arg(long)]
    cluster: Vec<ClusterKey>,
    #[command(flatten)]
    out: OutArg,
}

fn parse_beta_policy(s: &str) -> Result<BetaPolicy, String> {
    s.parse().map_err(|e: fleetwatch_core::Error| e.to_string())
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_ALERT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<fleetwatch_core::Error> for Failure {
    fn from(e: fleetwatch_core::Error) -> Self {
        Failure {
            code: if e.is_io() { EXIT_IO } else { EXIT_USAGE },
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Export(a) => commands::export(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("fleetwatch: {f}");
            ExitCode::from(f.code)
        }
    }
}
