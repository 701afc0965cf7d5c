//! Experiment runner: `run`, `report`, `chain`, `list-problems`, `list-solvers`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sego_core::benchmarks::benchmark_suite;
use sego_core::experiment::{chain_experiments, report_from_dir, run_experiment, ExperimentConfig, ExperimentOutcome};
use sego_core::sego::SOLVER_NAMES;
use sego_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "sego-bench", version, about = "Constrained Bayesian optimization benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        /// Restrict to these solvers (repeatable).
        #[arg(long = "solver")]
        solvers: Vec<String>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Write surrogate hyperparameters into every trace iteration.
        #[arg(long)]
        model_dump: bool,
    },
    /// Rebuild CSV, SVG and manifest files of an experiment directory.
    Report { runs_dir: PathBuf },
    /// Run two experiments, warm-starting the second from the first.
    Chain {
        #[arg(long = "c1")]
        first: PathBuf,
        #[arg(long = "c2")]
        second: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    ListProblems,
    ListSolvers,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain { .. } | Error::Dimension { .. } => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_RUN,
    }
}

fn summarize(outcome: &ExperimentOutcome) -> u8 {
    println!("{}: {} runs written to {}", outcome.report.experiment, outcome.traces.len(), outcome.dir.display());
    for s in &outcome.report.solvers {
        let finals: Vec<f64> = s.runs.iter().filter_map(|r| r.by_eval.last().copied()).collect();
        let median = s.runs.iter().find(|r| r.seed == s.median_seed).and_then(|r| r.by_eval.last());
        println!(
            "  {:<12} runs {:>3}  median-run final {:>14.6}  best {:>14.6}",
            s.solver,
            s.runs.len(),
            median.copied().unwrap_or(f64::NAN),
            finals.iter().copied().fold(f64::INFINITY, f64::min)
        );
    }
    for f in &outcome.failures {
        eprintln!("run failure: {} seed {}: {}", f.solver, f.seed, f.message);
    }
    if outcome.has_failures() {
        EXIT_RUN
    } else {
        0
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::from_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            solvers,
            seeds,
            out,
            jobs,
            model_dump,
        } => {
            let mut cfg = load(&config)?;
            if !solvers.is_empty() {
                cfg.solvers = solvers;
            }
            if let Some(n) = seeds {
                cfg.n_seeds = n;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if jobs.is_some() {
                cfg.jobs = jobs;
            }
            cfg.model_dump |= model_dump;
            let outcome = run_experiment(&cfg)?;
            Ok(summarize(&outcome))
        }
        Command::Report { runs_dir } => {
            let report = report_from_dir(&runs_dir)?;
            println!("report for {} written to {}", report.experiment, runs_dir.join("report").display());
            for s in &report.solvers {
                println!("  {:<12} runs {:>3}  median seed {}", s.solver, s.runs.len(), s.median_seed);
            }
            Ok(0)
        }
        Command::Chain { first, second, out } => {
            let mut a = load(&first)?;
            let mut b = load(&second)?;
            if let Some(o) = out {
                a.out_dir = o.clone();
                b.out_dir = o;
            }
            let (ra, rb) = chain_experiments(&a, &b)?;
            let ca = summarize(&ra);
            let cb = summarize(&rb);
            Ok(ca.max(cb))
        }
        Command::ListProblems => {
            for p in benchmark_suite() {
                let opt = p
                    .known_optimum()
                    .map(|o| format!("{:.6}", o.value))
                    .unwrap_or_else(|| "-".into());
                println!("{:<10} d={:<3} m={:<3} known optimum {}", p.name(), p.dim(), p.n_constraints(), opt);
            }
            Ok(0)
        }
        Command::ListSolvers => {
            for s in SOLVER_NAMES {
                println!("{s}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // accept the single-dash spelling `-c1` / `-c2`
    let args = std::env::args().map(|a| match a.as_str() {
        "-c1" => "--c1".to_string(),
        "-c2" => "--c2".to_string(),
        _ => a,
    });
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
