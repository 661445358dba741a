use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simplex_reduction_cli::{execute, resolve, Format, Mode, Overrides};

/// Simulate Brownian reduction on the probability simplex and compare it with
/// analytic oracles.
///
/// Exit status: 0 on success, 1 on invalid input or a runtime error, 2 when
/// the run completed but a checked expectation failed.
#[derive(Parser, Debug)]
#[command(name = "simplex-reduction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; trajectory i uses the stream (seed, i).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trajectories per ensemble (episodes for quantum-demo).
    #[arg(long, global = true)]
    trajectories: Option<u64>,
    /// Time step, in the same unit as tau.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Start vector for simulate, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Monte Carlo absorption statistics from one start vector.
    Simulate,
    /// Interval oracles for the absorption probability.
    Oracle,
    /// Regime-by-dimension matrix of absorption tests.
    TheoremSuite,
    /// Mean hitting time against the number of states.
    Scaling,
    /// Reduction episodes of a density matrix from a fixture.
    QuantumDemo,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Mode::Simulate,
            Command::Oracle => Mode::Oracle,
            Command::TheoremSuite => Mode::TheoremSuite,
            Command::Scaling => Mode::Scaling,
            Command::QuantumDemo => Mode::QuantumDemo,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let flags = Overrides {
        seed: cli.seed,
        trajectories: cli.trajectories,
        dt: cli.dt,
        workers: cli.workers,
        out: cli.out,
        format: cli.format,
        start: cli.start,
    };
    let outcome = resolve(cli.command.into(), cli.config.as_deref(), &flags).and_then(|cfg| execute(&cfg));
    match outcome {
        Ok(run) => {
            println!("{}", run.summary);
            for f in &run.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(run.status.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
