//! `levelrisk`: batch experiments for risk processes with level-dependent
//! premium rates.
//!
//! Every subcommand reads a JSON experiment file and writes a CSV table
//! preceded by `#` metadata lines. Exit codes: 0 on success, 2 for usage
//! and configuration errors, 3 for numerical failures.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{CliError, Output};
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "levelrisk", version, about = "Ruin probabilities under level-dependent premium rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0, value_name = "U64")]
    seed: u64,
    /// Worker threads; all available cores by default.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output file; stdout by default.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Ruin probability at the first level.
    Simulate,
    /// Ruin probabilities at every level.
    Curve,
    /// Power-law decay exponent fitted to the curve.
    Fit,
    /// Lyapunov drift check and two-sided bound envelope.
    Bounds,
    /// Transient, recurrent or inconclusive.
    Classify,
    /// Γ-limit diagnostic of R_n²/n.
    GammaTest,
    /// Heavy-tail envelope and truncated chain.
    Heavy,
    /// Monte Carlo ratios against the exponential closed form.
    ValidateExpexp,
    /// Lyapunov profile table.
    ProfileExport,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Curve => "curve",
            Command::Fit => "fit",
            Command::Bounds => "bounds",
            Command::Classify => "classify",
            Command::GammaTest => "gamma-test",
            Command::Heavy => "heavy",
            Command::ValidateExpexp => "validate-expexp",
            Command::ProfileExport => "profile-export",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args_os()))
}

fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            3
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::from_path(path).map_err(CliError::Config)?;
    let model = cfg.build_model()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    }
    let output = commands::dispatch(cli.command, &cfg, &model, cli.seed)?;
    let text = match output {
        Output::Text(line) => format!("{line}\n"),
        Output::Table(table) => {
            let mut s = format!(
                "# levelrisk v{}\n# command: {}\n# seed: {}\n# config: {}\n",
                env!("CARGO_PKG_VERSION"),
                cli.command.name(),
                cli.seed,
                cfg.echo()
            );
            s.push_str(&table.render());
            s
        }
    };
    let written = match &cli.out {
        Some(p) => std::fs::write(p, text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    written.map_err(|e| CliError::Numerical(format!("cannot write output: {e}")))
}
