//! `hons` — driver for simulations, fixed-point runs, norm reports,
//! invariant audits and estimate experiments on the coupled third-order
//! NLS pair.
//!
//! Exit codes: 0 success, 2 assertion/usage failure, 3 blow-up.  Every
//! failure also leaves a key=value `error.txt` record in the output
//! directory.

mod config;
mod runner;
mod snapshot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },
    #[error("snapshot format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] hons_core::Error),
    #[error("solution blew up at t = {time:.6e}")]
    BlowUp { time: f64 },
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::BlowUp { .. } => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Format { .. } => "format",
            CliError::Io(_) => "io",
            CliError::Core(_) => "core",
            CliError::BlowUp { .. } => "blow_up",
            CliError::CheckFailed(_) => "check_failed",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hons", about = "Coupled third-order NLS toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file (flat key=value); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default "out", or the config's `out` key).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the pair and write diagnostics CSV plus a final snapshot.
    Simulate,
    /// Run the integral-equation fixed point and report contraction ratios.
    Picard,
    /// Evolve, then report space-time restriction norms.
    Norms,
    /// Audit conservation laws, balance identities and reduction oracles.
    Verify,
    /// Run the linear / trilinear estimate experiments.
    Estimate,
    /// Print the effective configuration after defaults and presets.
    Config,
}

fn run(cli: &Cli) -> Result<PathBuf, (Option<PathBuf>, CliError)> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| (None, e.into()))?,
        None => String::new(),
    };
    let mut cfg = config::parse_config(&text).map_err(|e| (None, e))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| (None, CliError::from(e)))?;

    let result = match cli.command {
        Command::Simulate => runner::cmd_simulate(&cfg, &out_dir),
        Command::Picard => runner::cmd_picard(&cfg, &out_dir),
        Command::Norms => runner::cmd_norms(&cfg, &out_dir),
        Command::Verify => runner::cmd_verify(&cfg, &out_dir),
        Command::Estimate => runner::cmd_estimate(&cfg, &out_dir),
        Command::Config => {
            print!("{}", config::serialize_config(&cfg));
            Ok(())
        }
    };
    match result {
        Ok(()) => Ok(out_dir),
        Err(e) => Err((Some(out_dir), e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err((out_dir, err)) => {
            eprintln!("error: {err}");
            if let Some(dir) = out_dir {
                let record = format!(
                    "code = {}\nkind = {}\nmessage = {}\n",
                    err.exit_code(),
                    err.kind(),
                    err
                );
                let _ = std::fs::write(dir.join("error.txt"), record);
            }
            ExitCode::from(err.exit_code())
        }
    }
}
