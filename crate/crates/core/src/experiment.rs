//! Multi-seed experiments: shared designs of experiments, concurrent runs,
//! persisted traces and the convergence report.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionSpec, FeasibilityKind};
use crate::benchmarks::{benchmark, map_design};
use crate::doe::{doe_size, evaluate_points, incumbent_of, inject_warm_start, lhs_sample_with, Dataset, DoeRule};
use crate::error::{Error, Result};
use crate::evol::{evol_run, EvolConfig};
use crate::problem::{EvalClock, OptimizationProblem};
use crate::reporting::{build_report, emit_plots, ConvergenceReport, PenaltyMode, ReportOptions};
use crate::sego::{make_variant, sego_run, HyperRefit, InnerSolverConfig, Variant};
use crate::surrogate::{Kernel, Recombination};
use crate::trace::RunTrace;
use crate::FEAS_TOL;

pub const JOBS_ENV: &str = "SEGO_BENCH_JOBS";
pub const CONFIG_FILE: &str = "experiment.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// Total evaluations `k * d`.
    MultOfDim(usize),
    Fixed(usize),
}

impl BudgetRule {
    pub fn total(self, d: usize) -> usize {
        match self {
            BudgetRule::MultOfDim(k) => k * d,
            BudgetRule::Fixed(n) => n,
        }
    }
}

/// Partial override of the feasibility criterion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityOverride {
    pub kind: Option<FeasibilityKind>,
    pub tau0: Option<f64>,
    pub tau_end_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: String,
    pub solvers: Vec<String>,
    pub n_seeds: usize,
    pub seed_base: u64,
    pub doe: DoeRule,
    pub centered_lhs: bool,
    /// Total evaluations of a SEGO run; the injected warm start comes on top.
    pub budget: BudgetRule,
    pub evol: EvolConfig,
    /// Normalized design injected into every initial design.
    pub warm_start: Option<Vec<f64>>,
    pub out_dir: PathBuf,
    pub max_wall_time_s: Option<f64>,
    pub acquisition: Option<AcquisitionSpec>,
    pub feasibility: FeasibilityOverride,
    pub kernel: Kernel,
    pub kpls_components: usize,
    pub moe_max_experts: usize,
    pub recombination: Recombination,
    pub inner: InnerSolverConfig,
    pub hyper_refit: HyperRefit,
    /// Fixed virtual cost per evaluation instead of measured time; makes
    /// history files byte-reproducible.
    pub eval_cost_s: Option<f64>,
    pub jobs: Option<usize>,
    pub penalty_mode: PenaltyMode,
    pub model_dump: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            problem: "branin-c".into(),
            solvers: crate::sego::SOLVER_NAMES.iter().map(|s| s.to_string()).collect(),
            n_seeds: 10,
            seed_base: 0,
            doe: DoeRule::DPlusOne,
            centered_lhs: false,
            budget: BudgetRule::MultOfDim(20),
            evol: EvolConfig::default(),
            warm_start: None,
            out_dir: PathBuf::from("runs"),
            max_wall_time_s: None,
            acquisition: None,
            feasibility: FeasibilityOverride::default(),
            kernel: Kernel::default(),
            kpls_components: 3,
            moe_max_experts: 3,
            recombination: Recombination::default(),
            inner: InnerSolverConfig::default(),
            hyper_refit: HyperRefit::default(),
            eval_cost_s: None,
            jobs: None,
            penalty_mode: PenaltyMode::default(),
            model_dump: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn clock(&self) -> EvalClock {
        match self.eval_cost_s {
            Some(cost_s) => EvalClock::Simulated { cost_s },
            None => EvalClock::Measured,
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    /// Checks the configuration against its problem and returns
    /// `(problem, initial design size, SEGO enrichment count)`.
    pub fn validate(&self) -> Result<(OptimizationProblem, usize, usize)> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name '{}'", self.name)));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("solver list is empty".into()));
        }
        for s in &self.solvers {
            Variant::from_name(s)?;
        }
        let problem = benchmark(&self.problem)?;
        let d = problem.dim();
        let n_lhs = doe_size(d, self.doe)?;
        let total = self.budget.total(d);
        if total < n_lhs + 1 {
            return Err(Error::Config(format!(
                "budget {total} must exceed the initial design size {n_lhs}"
            )));
        }
        if let Some(w) = &self.warm_start {
            if w.len() != d {
                return Err(Error::Config(format!("warm_start has {} coordinates, problem has {d}", w.len())));
            }
            if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("warm_start must be normalized to [0, 1]".into()));
            }
        }
        if self.solvers.iter().any(|s| s == "evol") {
            self.evol.validate()?;
        }
        if let Some(a) = &self.acquisition {
            a.validate()?;
        }
        if let Some(c) = self.eval_cost_s {
            if !(c >= 0.0) {
                return Err(Error::Config("eval_cost_s must be nonnegative".into()));
            }
        }
        Ok((problem, n_lhs, total - n_lhs))
    }

    fn solver_config(&self, name: &str, n_initial: usize, max_nb_it: usize, seed: u64) -> Result<crate::sego::SolverConfig> {
        let mut c = make_variant(name)?.with_budget(n_initial, max_nb_it).with_seed(seed);
        if let Some(a) = self.acquisition {
            c.acquisition = a;
        }
        if let Some(k) = self.feasibility.kind {
            c.feasibility.kind = k;
        }
        if let Some(t) = self.feasibility.tau0 {
            c.feasibility.tau0 = t;
        }
        if let Some(t) = self.feasibility.tau_end_fraction {
            c.feasibility.tau_end_fraction = t;
        }
        c.kernel = self.kernel;
        c.kpls_components = self.kpls_components;
        c.moe_max_experts = self.moe_max_experts;
        c.recombination = self.recombination;
        c.inner = self.inner.clone();
        c.hyper_refit = self.hyper_refit;
        c.clock = self.clock();
        c.max_wall_time_s = self.max_wall_time_s;
        c.model_dump = self.model_dump;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug)]
pub struct RunFailure {
    pub solver: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub traces: Vec<RunTrace>,
    pub failures: Vec<RunFailure>,
    pub report: ConvergenceReport,
}

impl ExperimentOutcome {
    /// True when some run raised an error or stopped early.
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty() || self.traces.iter().any(|t| t.status != crate::trace::RunStatus::Completed)
    }
}

/// Number of concurrent jobs: the config value, else `SEGO_BENCH_JOBS`,
/// else the available parallelism.
pub fn job_count(config: &ExperimentConfig) -> usize {
    let env = std::env::var(JOBS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let cap = env.filter(|n| *n >= 1);
    let wanted = config
        .jobs
        .or(cap)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    match cap {
        Some(c) => wanted.min(c).max(1),
        None => wanted.max(1),
    }
}

/// Initial design of one seed, warm start included.
pub fn initial_design(config: &ExperimentConfig, problem: &OptimizationProblem, n_lhs: usize, seed: u64) -> Result<Dataset> {
    let points = lhs_sample_with(n_lhs, problem.dim(), seed, config.centered_lhs);
    let mut ds = evaluate_points(problem, &points, seed, config.clock())?;
    if let Some(w) = &config.warm_start {
        inject_warm_start(&mut ds, w, problem, config.clock())?;
    }
    Ok(ds)
}

/// Runs every (seed, solver) pair, persists the traces and emits the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (problem, n_lhs, max_nb_it) = config.validate()?;
    let seeds: Vec<u64> = (0..config.n_seeds as u64).map(|i| config.seed_base + i).collect();
    let designs = seeds
        .iter()
        .map(|&s| initial_design(config, &problem, n_lhs, s))
        .collect::<Result<Vec<_>>>()?;

    let dir = config.experiment_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;

    let jobs: Vec<(usize, &str)> = (0..seeds.len())
        .flat_map(|i| config.solvers.iter().map(move |s| (i, s.as_str())))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job_count(config))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    log::info!(
        "{}: {} runs on {} ({} initial points, {} enrichments)",
        config.name,
        jobs.len(),
        problem.name(),
        n_lhs,
        max_nb_it
    );
    let results: Vec<(usize, &str, Result<RunTrace>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, solver)| {
                let seed = seeds[i];
                let initial = designs[i].clone();
                let run = if solver == "evol" {
                    let mut evol = config.evol.clone();
                    evol.clock = config.clock();
                    evol.max_wall_time_s = config.max_wall_time_s;
                    evol_run(&problem, &evol, initial, seed)
                } else {
                    config
                        .solver_config(solver, initial.len(), max_nb_it, seed)
                        .and_then(|c| sego_run(&problem, &c, initial))
                };
                if let Ok(t) = &run {
                    log::info!("{} seed {seed}: {} records, {:?}", solver, t.dataset.len(), t.status);
                }
                (i, solver, run)
            })
            .collect()
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (i, solver, run) in results {
        match run {
            Ok(t) => {
                t.write(&dir.join(solver).join(seeds[i].to_string()))?;
                traces.push(t);
            }
            Err(e) => {
                log::error!("{solver} seed {}: {e}", seeds[i]);
                failures.push(RunFailure {
                    solver: solver.to_string(),
                    seed: seeds[i],
                    message: e.to_string(),
                });
            }
        }
    }
    let report = build_report(&config.name, &traces, &report_options(config))?;
    emit_plots(&report, &dir.join("report"))?;
    if !failures.is_empty() {
        let listed: Vec<serde_json::Value> = failures
            .iter()
            .map(|f| serde_json::json!({"solver": f.solver, "seed": f.seed, "error": f.message}))
            .collect();
        fs::write(dir.join("report").join("failures.json"), serde_json::to_string_pretty(&listed)? + "\n")?;
    }
    Ok(ExperimentOutcome {
        dir,
        traces,
        failures,
        report,
    })
}

pub fn report_options(config: &ExperimentConfig) -> ReportOptions {
    ReportOptions {
        penalty_mode: config.penalty_mode,
        budget_time_s: config.max_wall_time_s,
        warm_start: config.warm_start.clone(),
    }
}

/// Rebuilds the report of a persisted experiment directory.
pub fn report_from_dir(experiment_dir: &Path) -> Result<ConvergenceReport> {
    let traces = crate::reporting::load_traces(experiment_dir)?;
    let cfg_path = experiment_dir.join(CONFIG_FILE);
    let opts = if cfg_path.exists() {
        report_options(&ExperimentConfig::from_file(&cfg_path)?)
    } else {
        ReportOptions::default()
    };
    let name = experiment_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let report = build_report(&name, &traces, &opts)?;
    emit_plots(&report, &experiment_dir.join("report"))?;
    Ok(report)
}

/// Best feasible design across every run, in normalized coordinates.
pub fn best_feasible_design(traces: &[RunTrace]) -> Option<Vec<f64>> {
    let mut best: Option<&crate::problem::EvaluationRecord> = None;
    for t in traces {
        if let Some(r) = incumbent_of(t.records(), FEAS_TOL).filter(|r| r.is_feasible(FEAS_TOL)) {
            if best.map(|b| r.f < b.f).unwrap_or(true) {
                best = Some(r);
            }
        }
    }
    best.map(|r| r.x.clone())
}

/// Runs `first`, then `second` warm-started from the best feasible design
/// of `first` mapped onto the second problem. An explicit warm start in
/// `second` takes precedence.
pub fn chain_experiments(first: &ExperimentConfig, second: &ExperimentConfig) -> Result<(ExperimentOutcome, ExperimentOutcome)> {
    second.validate()?;
    let a = run_experiment(first)?;
    let mut second = second.clone();
    if second.warm_start.is_none() {
        let x = best_feasible_design(&a.traces)
            .ok_or_else(|| Error::Chain(format!("experiment '{}' found no feasible design", first.name)))?;
        let d2 = benchmark(&second.problem)?.dim();
        second.warm_start = Some(map_design(&x, d2));
    }
    let b = run_experiment(&second)?;
    Ok((a, b))
}
