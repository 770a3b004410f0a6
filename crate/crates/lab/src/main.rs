#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lqr_mpi::Gain;
use lqr_mpi_lab::io::{self, IoError};
use lqr_mpi_lab::problems::perturbed_initial_gain_for;
use lqr_mpi_lab::protocols::{
    run_monte_carlo, run_representative, Algorithm, MassConfig, Mode, MonteCarloConfig,
};
use lqr_mpi_lab::solve::{errors_json, solve, SolveOptions, SolveStatus};

const INVALID_INPUT: u8 = 2;
const SOLVER_FAILURE: u8 = 3;

/// Target relative error of `--k0 auto`.
const AUTO_K0_ERROR: f64 = 10.0;

#[derive(Parser)]
#[command(
    name = "lqr-mpi",
    version,
    about = "Midpoint policy iteration for discrete-time LQR"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on a problem file.
    Solve(SolveArgs),
    /// Run one of the built-in experiments.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Pi,
    Mpi,
    Api,
    Ampi,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Pi => Algorithm::Pi,
            AlgorithmArg::Mpi => Algorithm::Mpi,
            AlgorithmArg::Api => Algorithm::Api,
            AlgorithmArg::Ampi => Algorithm::Ampi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataModeArg {
    Off,
    On,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Problem JSON with fields n, m, A, B, Q, W.
    problem: PathBuf,
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Gain JSON file, or `auto` for a random gain at relative error 10.
    #[arg(long, default_value = "auto")]
    k0: String,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Iteration budget (pi, mpi; default 50) or iteration count (api, ampi; default 10).
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 300)]
    rollout_len: usize,
    #[arg(long, value_enum, default_value = "off")]
    data_mode: DataModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path; a CSV is written next to it. Prints JSON when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Experiment {
    /// Inertial-mass comparison of PI, MPI, API and AMPI.
    Mass {
        #[arg(long, default_value_t = 300)]
        rollout_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-instance sweep.
    MonteCarlo {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, value_enum, default_value = "exact")]
        mode: ModeArg,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 300)]
        rollout_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Solver,
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn emit<T: serde::Serialize>(
    out: Option<&PathBuf>,
    value: &T,
    csv: impl FnOnce(&std::path::Path) -> Result<(), IoError>,
) -> Result<(), Failure> {
    match out {
        Some(path) => {
            io::write_json(path, value)?;
            csv(&io::csv_path(path))?;
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(value).expect("serializable")
        ),
    }
    Ok(())
}

fn run_solve(args: &SolveArgs) -> Result<(), Failure> {
    if !(args.tol >= 0.0) {
        return Err(Failure::Input(format!(
            "--tol must be nonnegative, got {}",
            args.tol
        )));
    }
    let pd = io::read_problem(&args.problem)?;
    let k0: Gain = if args.k0 == "auto" {
        perturbed_initial_gain_for(&pd, AUTO_K0_ERROR, args.seed)
            .map_err(|e| Failure::Input(format!("--k0 auto: {e}")))?
    } else {
        io::read_gain(args.k0.as_ref(), pd.m(), pd.n())?
    };
    let algorithm = Algorithm::from(args.algorithm);
    let mut opts = SolveOptions::new(algorithm);
    opts.tolerance = args.tol;
    if let Some(n) = args.max_iters {
        opts.max_iterations = n;
    }
    opts.rollout_len = args.rollout_len;
    opts.data_mode = match args.data_mode {
        DataModeArg::Off => "off".into(),
        DataModeArg::On => "on".into(),
    };
    opts.seed = args.seed;

    let report = solve(&pd, &k0, &opts);
    emit(args.out.as_ref(), &report, |p| {
        io::write_csv(
            p,
            [io::CsvRow {
                instance: 0,
                result: &report.result,
                seed: args.seed,
            }],
        )
    })?;
    if args.out.is_some() {
        eprintln!("{}", errors_json(&report));
    }
    match report.status {
        SolveStatus::Completed => Ok(()),
        SolveStatus::InvalidInitialGain => Err(Failure::Input(report.message.unwrap_or_default())),
        SolveStatus::NonConvergence | SolveStatus::Failed => {
            eprintln!("error: {}", report.message.unwrap_or_default());
            Err(Failure::Solver)
        }
    }
}

fn run_experiment(exp: &Experiment) -> Result<(), Failure> {
    match exp {
        Experiment::Mass {
            rollout_len,
            seed,
            out,
        } => {
            let cfg = MassConfig {
                rollout_len: *rollout_len,
                seed: *seed,
                ..MassConfig::default()
            };
            let report = run_representative(&cfg).map_err(|e| Failure::Input(e.to_string()))?;
            emit(out.as_ref(), &report, |p| {
                io::write_csv(p, io::mass_csv_rows(&report))
            })
        }
        Experiment::MonteCarlo {
            count,
            mode,
            n,
            m,
            rollout_len,
            seed,
            out,
        } => {
            let cfg = MonteCarloConfig {
                count: *count,
                n: *n,
                m: *m,
                master_seed: *seed,
                mode: match mode {
                    ModeArg::Exact => Mode::Exact,
                    ModeArg::Approx => Mode::Approximate,
                },
                rollout_len: *rollout_len,
                ..MonteCarloConfig::default()
            };
            let summary = run_monte_carlo(&cfg).map_err(|e| Failure::Input(e.to_string()))?;
            emit(out.as_ref(), &summary, |p| {
                io::write_csv(p, io::monte_carlo_csv_rows(&summary))
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(INVALID_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Experiment(exp) => run_experiment(exp),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(INVALID_INPUT)
        }
        Err(Failure::Solver) => ExitCode::from(SOLVER_FAILURE),
    }
}
