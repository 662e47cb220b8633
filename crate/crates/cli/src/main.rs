//! `chemostat`: steady states, thresholds, sweeps and simulations of single,
//! serial and parallel chemostats from scenario files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod scenario;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Format, Run, Status};

#[derive(Parser)]
#[command(name = "chemostat", version, about = "Chemostat steady-state analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (.toml, or .json).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Seed of the random initial conditions in trial mode.
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Steady state, output concentration and stability verdict.
    Equilibrium,
    /// Output concentration along a grid of r (serial) or d (parallel).
    Sweep,
    /// One trajectory, or randomized convergence trials.
    Simulate,
    /// Best serial and parallel layouts against the single tank.
    Compare {
        #[arg(long)]
        s_in: Option<f64>,
    },
    /// Input-level thresholds of a parallel split.
    Thresholds {
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.jobs {
        anyhow::ensure!(n > 0, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let scenario = cli.scenario.as_deref().map(scenario::load).transpose()?;
    let mut out: Box<dyn Write> = match &cli.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut log = io::stderr().lock();
    let mut ctx = Run {
        scenario: scenario.as_ref(),
        format: cli.format,
        seed: cli.seed,
        out: &mut *out,
        log: &mut log,
    };
    let status = match cli.command {
        Command::Equilibrium => commands::equilibrium_cmd(&mut ctx),
        Command::Sweep => commands::sweep_cmd(&mut ctx),
        Command::Simulate => commands::simulate_cmd(&mut ctx),
        Command::Compare { s_in } => commands::compare_cmd(&mut ctx, s_in),
        Command::Thresholds { r, alpha } => commands::thresholds_cmd(&mut ctx, r, alpha),
    }?;
    out.flush()?;
    Ok(status)
}

fn report_error(err: &anyhow::Error) {
    eprintln!("error: {err:#}");
    for cause in err.chain() {
        if let Some(chemostat_core::Error::StepSizeUnderflow { last_state, .. }) = cause.downcast_ref() {
            eprintln!("last state: {last_state:?}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::WashoutOnly) => ExitCode::from(2),
        Err(e) => {
            report_error(&e);
            ExitCode::from(1)
        }
    }
}
