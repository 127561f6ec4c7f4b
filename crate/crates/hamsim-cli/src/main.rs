//! `hamsim`: config-driven experiment runner.
//!
//! Subcommands: `integrate`, `bench-energy`, `carleman`, `verify`,
//! `dump-matrix`. Exit codes: 0 success, 1 verification/runtime failure,
//! 2 config error, 3 capability or resource limit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "hamsim", version, about = "Structure-preserving Hamiltonian ODE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured model and write a trajectory CSV plus a
    /// run-metadata report.
    Integrate(RunArgs),
    /// Run the rkg/rk4/verlet energy benchmark and write one drift CSV per
    /// method plus a summary table.
    BenchEnergy(RunArgs),
    /// Plan and run a Carleman embedding; writes the first-block trajectory
    /// and the embedding diagnostics report.
    Carleman(RunArgs),
    /// Run the invariant suites and print `name,status,measured,threshold`
    /// lines.
    Verify(VerifyArgs),
    /// Dump an assembled matrix in coordinate triplet CSV form.
    DumpMatrix(DumpArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override (overrides `run.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensemble/benchmark parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct VerifyArgs {
    /// Suite to run: all, rkg, history, carleman or bounds.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct DumpArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which matrix: q, c, history-l or carleman-a.
    #[arg(long)]
    what: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Integrate(a) | Command::BenchEnergy(a) | Command::Carleman(a) => a.threads,
        Command::Verify(a) => a.threads,
        Command::DumpMatrix(a) => a.run.threads,
    };
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }

    let result = match cli.command {
        Command::Integrate(args) => commands::integrate(&args.config, args.out, args.seed),
        Command::BenchEnergy(args) => commands::bench_energy(&args.config, args.out, args.seed),
        Command::Carleman(args) => commands::carleman(&args.config, args.out, args.seed),
        Command::Verify(args) => commands::verify(&args.suite, args.seed.unwrap_or(42)),
        Command::DumpMatrix(args) => {
            commands::dump_matrix(&args.run.config, args.run.out, args.run.seed, &args.what)
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
