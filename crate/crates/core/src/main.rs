use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mdpsim::cli::{exit_code, run, Command, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "mdpsim", version, about = "Diffusions in random and periodic environments")]
struct Args {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long, env = "MDPSIM_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "MDPSIM_THREADS")]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Effective coefficients, invariant law and Poisson solutions.
    Homogenize(Common),
    /// Sample paths.
    Simulate(Common),
    /// Decomposition residuals and quadratic-variation consistency.
    VerifyDecomposition(Common),
    /// Empirical tail frequencies against the exponential bound.
    TailBounds(Common),
    /// Tube-exit probability scan over epsilon.
    MdpScan(Common),
    /// Scan of the drift and diffusion negligibility events.
    NegligibilityScan(Common),
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, common) = match args.command {
        Sub::Homogenize(c) => (Command::Homogenize, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::VerifyDecomposition(c) => (Command::VerifyDecomposition, c),
        Sub::TailBounds(c) => (Command::TailBounds, c),
        Sub::MdpScan(c) => (Command::MdpScan, c),
        Sub::NegligibilityScan(c) => (Command::NegligibilityScan, c),
    };
    let opts = RunOptions { config: common.config, seed: common.seed, threads: common.threads, out: common.out };
    let result = run(command, &opts);
    match &result {
        Ok(outcome) => {
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if !outcome.checks_passed {
                eprintln!("{}: statistical check failed", command.name());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
