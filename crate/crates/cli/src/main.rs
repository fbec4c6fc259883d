//! `kicktop`: command-line front end for the measurement-and-feedback simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kicktop_core::analysis::config::Config;
use kicktop_core::analysis::output::{run_ensemble, Format, RunOptions, Task};
use kicktop_core::analysis::Engine;

#[derive(Parser)]
#[command(name = "kicktop", version, about = "Simulate kicked-top dynamics through weak measurement and feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Realizations of one trajectory from the first initial condition
    Trajectory(Common),
    /// Trajectories over a grid of initial conditions, with similarity scores
    Portrait(Common),
    /// Largest Lyapunov exponent for each k in the sweep
    Lyapunov(Common),
    /// Monte Carlo average against the dephased kicked-top map
    Averaged(Common),
    /// Trajectories measured through the stochastic master equation
    Sme(Common),
    /// Similarity scores of a portrait against the classical map
    Similarity(Common),
    /// Mean maximal distance to the classical orbit versus σ/√J
    SweepSigma(Common),
    /// Mean similarity versus optical depth
    SweepOd(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Classical,
    Hp,
    Quantum,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.engine
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, common) = match cli.command {
        Command::Trajectory(c) => (Task::Trajectory, c),
        Command::Portrait(c) => (Task::Portrait, c),
        Command::Lyapunov(c) => (Task::Lyapunov, c),
        Command::Averaged(c) => (Task::Averaged, c),
        Command::Sme(c) => (Task::Sme, c),
        Command::Similarity(c) => (Task::Similarity, c),
        Command::SweepSigma(c) => (Task::SweepSigma, c),
        Command::SweepOd(c) => (Task::SweepOd, c),
    };
    let result = Config::load(&common.config).and_then(|config| {
        let opts = RunOptions {
            task,
            engine: common.engine.map(|e| match e {
                EngineArg::Classical => Engine::Classical,
                EngineArg::Hp => Engine::Hp,
                EngineArg::Quantum => Engine::Quantum,
            }),
            seed: common.seed,
            out_dir: common.out,
            threads: common.threads,
            format: match common.format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Jsonl => Format::Jsonl,
            },
        };
        run_ensemble(&config, &opts)
    });
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
