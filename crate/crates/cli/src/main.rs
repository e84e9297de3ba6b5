//! `compsel`: equilibrium solving, simulation, learning, gradient checks and
//! data ingestion from JSON configs.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::output::Output;

#[derive(Parser)]
#[command(name = "compsel", version, about = "Capacity-constrained selection with strategic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; every field is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set n=5000` or `--set distribution.kind=high_dim`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Omit the timestamp line from CSV outputs.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field equilibrium threshold.
    EqSolve {
        #[command(flatten)]
        common: Common,
        /// Also sweep the equilibrium value over criterion angles (two covariates).
        #[arg(long)]
        sweep_beta: bool,
    },
    /// Run finite-population threshold dynamics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Learn a criterion with one or more methods.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Overrides the method list: competition, strategy or capacity.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Compare gradient estimates with the analytic gradient.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Build a type distribution from a student CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Student CSV; overrides the config.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Fail when the inversion round trip exceeds the tolerance.
        #[arg(long)]
        check_roundtrip: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EqSolve { common, sweep_beta } => {
            let cfg = config::load(common.config.as_deref(), &common.overrides)?;
            let out = Output::new(&common.out, common.reproducible)?;
            commands::eq_solve(&cfg, sweep_beta, &out)
        }
        Command::Simulate { common, seed } => {
            let cfg = config::load(common.config.as_deref(), &common.overrides)?;
            let out = Output::new(&common.out, common.reproducible)?;
            commands::simulate(&cfg, seed, &out)
        }
        Command::Learn { common, seed, method } => {
            let mut overrides = common.overrides.clone();
            if !method.is_empty() {
                let list: Vec<String> = method.iter().map(|m| format!("\"{m}\"")).collect();
                overrides.push(format!("methods=[{}]", list.join(",")));
            }
            let cfg = config::load(common.config.as_deref(), &overrides)?;
            let out = Output::new(&common.out, common.reproducible)?;
            commands::learn(&cfg, seed, &out)
        }
        Command::GradCheck { common, seed } => {
            let cfg = config::load(common.config.as_deref(), &common.overrides)?;
            let out = Output::new(&common.out, common.reproducible)?;
            commands::grad_check(&cfg, seed, &out)
        }
        Command::Ingest {
            common,
            seed,
            input,
            check_roundtrip,
        } => {
            let mut cfg: config::IngestCliConfig = config::load(common.config.as_deref(), &common.overrides)?;
            cfg.check_roundtrip |= check_roundtrip;
            let out = Output::new(&common.out, common.reproducible)?;
            commands::ingest(&cfg, input, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("compsel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
