//! Convergence and parallel-coordinates reporting over run traces.
//!
//! The metric is the penalized best-valid value: the running minimum of
//! feasible objective values, with the penalty `P` (the highest feasible
//! objective ever found) standing in until a run has a feasible point.

mod svg;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::doe::{compare_records, incumbent_of, inf_dist, DUPLICATE_TOL};
use crate::error::{Error, Result};
use crate::problem::EvaluationRecord;
use crate::sego::SOLVER_NAMES;
use crate::trace::{RunStatus, RunTrace};
use crate::FEAS_TOL;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// One penalty shared by every solver and seed of the experiment.
    #[default]
    Experiment,
    /// Each run is penalized with its own highest feasible value.
    PerRun,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub penalty_mode: PenaltyMode,
    /// Vertical marker on the time plot.
    pub budget_time_s: Option<f64>,
    /// Injected warm-start design; it becomes the reference design.
    pub warm_start: Option<Vec<f64>>,
}

fn feasible_values(records: &[EvaluationRecord]) -> impl Iterator<Item = f64> + '_ {
    records.iter().filter(|r| r.is_feasible(FEAS_TOL)).map(|r| r.f)
}

/// Running minimum of feasible objective values, `penalty` before the first.
pub fn best_valid_series(records: &[EvaluationRecord], penalty: f64) -> Vec<f64> {
    let mut best = f64::INFINITY;
    records
        .iter()
        .map(|r| {
            if r.is_feasible(FEAS_TOL) && r.f < best {
                best = r.f;
            }
            if best.is_finite() {
                best
            } else {
                penalty
            }
        })
        .collect()
}

/// Highest feasible objective of one history.
pub fn run_penalty(records: &[EvaluationRecord]) -> Option<f64> {
    feasible_values(records).reduce(f64::max)
}

/// Highest feasible objective across every history of an experiment.
pub fn experiment_penalty<'a>(runs: impl IntoIterator<Item = &'a [EvaluationRecord]>) -> Result<f64> {
    runs.into_iter()
        .filter_map(run_penalty)
        .reduce(f64::max)
        .ok_or_else(|| Error::Report("no feasible record in any run; increase the budgets or the number of seeds".into()))
}

/// Global extrema over a set of series.
pub fn scale_bounds(series: &[Vec<f64>]) -> (f64, f64) {
    series
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

pub fn scale_value(v: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Affine map of every value onto `[0, 1]` with the global extrema.
pub fn scale01(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let bounds = scale_bounds(series);
    if !(bounds.1 > bounds.0) {
        log::warn!("scale01: constant series, emitting 0.5 everywhere");
    }
    series
        .iter()
        .map(|s| s.iter().map(|v| scale_value(*v, bounds)).collect())
        .collect()
}

/// Median-selection key: feasible runs by best objective, then infeasible
/// runs by minimal L1 violation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub infeasible: bool,
    pub value: f64,
}

impl RunKey {
    pub fn cmp(&self, other: &Self) -> Ordering {
        self.infeasible
            .cmp(&other.infeasible)
            .then(self.value.total_cmp(&other.value))
    }
}

pub fn run_key(records: &[EvaluationRecord]) -> RunKey {
    match feasible_values(records).reduce(f64::min) {
        Some(v) => RunKey {
            infeasible: false,
            value: v,
        },
        None => RunKey {
            infeasible: true,
            value: records.iter().map(|r| r.violation()).fold(f64::INFINITY, f64::min),
        },
    }
}

/// Position of the median among `(key, seed)` pairs: sorted by key, ties by
/// seed, element `floor(n / 2)`.
pub fn median_index(keys: &[(RunKey, u64)]) -> usize {
    assert!(!keys.is_empty(), "median of no runs");
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].0.cmp(&keys[b].0).then(keys[a].1.cmp(&keys[b].1)));
    order[keys.len() / 2]
}

/// Index of the median run among traces of one solver.
pub fn median_run(traces: &[&RunTrace]) -> usize {
    let keys: Vec<(RunKey, u64)> = traces.iter().map(|t| (run_key(t.records()), t.seed)).collect();
    median_index(&keys)
}

/// Sample mean and standard deviation of columns, carrying shorter rows
/// forward with their last value. The deviation is absent for one row.
pub fn envelope(rows: &[Vec<f64>]) -> (Vec<f64>, Option<Vec<f64>>) {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.len() as f64;
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for k in 0..len {
        let col: Vec<f64> = rows.iter().filter_map(|r| r.get(k).or(r.last()).copied()).collect();
        let m = col.iter().sum::<f64>() / n;
        mean.push(m);
        if rows.len() > 1 {
            std.push((col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        }
    }
    (mean, (rows.len() > 1).then_some(std))
}

/// SHA-256 of the initial-design block, timings excluded.
pub fn doe_hash(records: &[EvaluationRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        let line = serde_json::json!({"x": r.x, "f": r.f, "c": r.c, "eval_index": r.eval_index});
        h.update(line.to_string().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedSeries {
    pub seed: u64,
    pub penalty: f64,
    pub by_eval: Vec<f64>,
    pub times: Vec<f64>,
    pub key: RunKey,
    pub status: RunStatus,
    pub n_records: usize,
    pub doe_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeEnvelope {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Infeasible,
    Feasible,
    Optimum,
    Reference,
}

impl PointClass {
    fn name(self) -> &'static str {
        match self {
            PointClass::Infeasible => "infeasible",
            PointClass::Feasible => "feasible",
            PointClass::Optimum => "optimum",
            PointClass::Reference => "reference",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParallelRow {
    pub eval_index: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub class: PointClass,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub solver: String,
    pub runs: Vec<SeedSeries>,
    pub mean: Vec<f64>,
    pub std: Option<Vec<f64>>,
    pub time: TimeEnvelope,
    pub median_seed: u64,
    /// Median-run history followed by the reference row.
    pub parallel: Vec<ParallelRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceDesign {
    pub solver: String,
    pub seed: u64,
    pub record: EvaluationRecord,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub problem: String,
    pub penalty: f64,
    /// `(min_val, max_val)` of the convergence scaling.
    pub scale: (f64, f64),
    /// Objective bounds of the parallel plots, shared by every solver.
    pub parallel_scale: (f64, f64),
    pub solvers: Vec<SolverReport>,
    pub reference: ReferenceDesign,
    pub budget_time_s: Option<f64>,
    pub warm_start_value: Option<f64>,
}

fn solver_rank(name: &str) -> (usize, String) {
    (
        SOLVER_NAMES.iter().position(|s| *s == name).unwrap_or(SOLVER_NAMES.len()),
        name.to_string(),
    )
}

fn value_at(times: &[f64], series: &[f64], t: f64, penalty: f64) -> f64 {
    let k = times.partition_point(|v| *v <= t);
    if k == 0 {
        penalty
    } else {
        series[k - 1]
    }
}

/// Aggregates the traces of one experiment.
pub fn build_report(experiment: &str, traces: &[RunTrace], opts: &ReportOptions) -> Result<ConvergenceReport> {
    if traces.is_empty() {
        return Err(Error::Report(format!("experiment '{experiment}' has no runs")));
    }
    let shared = experiment_penalty(traces.iter().map(|t| t.records()))?;
    let mut groups: BTreeMap<(usize, String), Vec<&RunTrace>> = BTreeMap::new();
    for t in traces {
        groups.entry(solver_rank(&t.solver)).or_default().push(t);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|t| t.seed);
    }

    let penalty_of = |t: &RunTrace| match opts.penalty_mode {
        PenaltyMode::Experiment => shared,
        PenaltyMode::PerRun => run_penalty(t.records()).unwrap_or(shared),
    };

    // reference design: the warm start when given, else the best feasible record
    let ordered: Vec<&RunTrace> = groups.values().flatten().copied().collect();
    let warm = opts.warm_start.as_ref().and_then(|w| {
        ordered.iter().find_map(|t| {
            t.records()
                .iter()
                .find(|r| inf_dist(&r.x, w) < DUPLICATE_TOL.max(1e-12))
                .map(|r| (t, r))
        })
    });
    if opts.warm_start.is_some() && warm.is_none() {
        log::warn!("warm-start design not found in any history; using the best feasible design as reference");
    }
    let reference = match warm {
        Some((t, r)) => ReferenceDesign {
            solver: t.solver.clone(),
            seed: t.seed,
            record: r.clone(),
        },
        None => {
            let mut best: Option<(&RunTrace, &EvaluationRecord)> = None;
            for t in &ordered {
                if let Some(r) = incumbent_of(t.records(), FEAS_TOL) {
                    if best.map(|(_, b)| compare_records(r, b, FEAS_TOL) == Ordering::Less).unwrap_or(true) {
                        best = Some((t, r));
                    }
                }
            }
            let (t, r) = best.expect("a feasible record exists");
            ReferenceDesign {
                solver: t.solver.clone(),
                seed: t.seed,
                record: r.clone(),
            }
        }
    };

    let mut solvers = Vec::new();
    let mut all_series = Vec::new();
    for ((_, name), runs) in &groups {
        let mut seeds = Vec::new();
        for t in runs {
            let p = penalty_of(t);
            let by_eval = best_valid_series(t.records(), p);
            all_series.push(by_eval.clone());
            seeds.push(SeedSeries {
                seed: t.seed,
                penalty: p,
                by_eval,
                times: t.cumulative_times(),
                key: run_key(t.records()),
                status: t.status.clone(),
                n_records: t.dataset.len(),
                doe_hash: doe_hash(t.initial_records()),
            });
        }
        let rows: Vec<Vec<f64>> = seeds.iter().map(|s| s.by_eval.clone()).collect();
        let (mean, std) = envelope(&rows);

        let mut grid: Vec<f64> = seeds.iter().flat_map(|s| s.times.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let at_grid: Vec<Vec<f64>> = seeds
            .iter()
            .map(|s| grid.iter().map(|t| value_at(&s.times, &s.by_eval, *t, s.penalty)).collect())
            .collect();
        let (tmean, tstd) = envelope(&at_grid);

        let m = median_run(runs);
        let median = runs[m];
        let opt_index = incumbent_of(median.records(), FEAS_TOL).map(|r| r.eval_index);
        let mut parallel: Vec<ParallelRow> = median
            .records()
            .iter()
            .map(|r| ParallelRow {
                eval_index: r.eval_index,
                x: r.x.clone(),
                f: r.f,
                violation: r.violation(),
                class: if Some(r.eval_index) == opt_index {
                    PointClass::Optimum
                } else if r.is_feasible(FEAS_TOL) {
                    PointClass::Feasible
                } else {
                    PointClass::Infeasible
                },
            })
            .collect();
        parallel.push(ParallelRow {
            eval_index: reference.record.eval_index,
            x: reference.record.x.clone(),
            f: reference.record.f,
            violation: reference.record.violation(),
            class: PointClass::Reference,
        });

        solvers.push(SolverReport {
            solver: name.clone(),
            runs: seeds,
            mean,
            std,
            time: TimeEnvelope {
                grid,
                mean: tmean,
                std: tstd,
            },
            median_seed: median.seed,
            parallel,
        });
    }

    let scale = scale_bounds(&all_series);
    let parallel_scale = scale_bounds(
        &solvers
            .iter()
            .map(|s| s.parallel.iter().map(|r| r.f).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    Ok(ConvergenceReport {
        experiment: experiment.to_string(),
        problem: traces[0].problem.clone(),
        penalty: shared,
        scale,
        parallel_scale,
        solvers,
        warm_start_value: warm.map(|(_, r)| r.f),
        reference,
        budget_time_s: opts.budget_time_s,
    })
}

fn file_stem(solver: &str) -> String {
    solver
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl ConvergenceReport {
    pub fn solver(&self, name: &str) -> Option<&SolverReport> {
        self.solvers.iter().find(|s| s.solver == name)
    }

    fn scaled(&self, v: f64) -> f64 {
        scale_value(v, self.scale)
    }

    fn spread(&self, v: f64) -> f64 {
        let (lo, hi) = self.scale;
        if hi > lo {
            v / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn convergence_evals_csv(&self) -> String {
        let mut out = String::from("solver,series,axis,value\n");
        for s in &self.solvers {
            for run in &s.runs {
                for (k, v) in run.by_eval.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", s.solver, run.seed, k + 1, self.scaled(*v));
                }
            }
            for (k, v) in s.mean.iter().enumerate() {
                let _ = writeln!(out, "{},mean,{},{}", s.solver, k + 1, self.scaled(*v));
            }
            if let Some(std) = &s.std {
                for (k, v) in std.iter().enumerate() {
                    let _ = writeln!(out, "{},std,{},{}", s.solver, k + 1, self.spread(*v));
                }
            }
        }
        out
    }

    pub fn convergence_time_csv(&self) -> String {
        let mut out = String::from("solver,series,axis,value\n");
        for s in &self.solvers {
            for run in &s.runs {
                for (t, v) in run.times.iter().zip(&run.by_eval) {
                    let _ = writeln!(out, "{},{},{},{}", s.solver, run.seed, t, self.scaled(*v));
                }
            }
            for (t, v) in s.time.grid.iter().zip(&s.time.mean) {
                let _ = writeln!(out, "{},mean,{},{}", s.solver, t, self.scaled(*v));
            }
            if let Some(std) = &s.time.std {
                for (t, v) in s.time.grid.iter().zip(std) {
                    let _ = writeln!(out, "{},std,{},{}", s.solver, t, self.spread(*v));
                }
            }
        }
        out
    }

    pub fn parallel_csv(&self, solver: &SolverReport) -> String {
        let d = solver.parallel.first().map(|r| r.x.len()).unwrap_or(0);
        let mut out = String::from("eval_index");
        for i in 0..d {
            let _ = write!(out, ",DV_{i}");
        }
        out.push_str(",objective,violation,class\n");
        for r in &solver.parallel {
            let _ = write!(out, "{}", r.eval_index);
            for v in &r.x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                scale_value(r.f, self.parallel_scale),
                r.violation,
                r.class.name()
            );
        }
        out
    }

    fn manifest(&self) -> serde_json::Value {
        let mut seeds: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
        for s in &self.solvers {
            for r in &s.runs {
                seeds.entry(r.seed).or_default().push(&r.doe_hash);
            }
        }
        let doe: Vec<serde_json::Value> = seeds
            .iter()
            .map(|(seed, hashes)| {
                serde_json::json!({
                    "seed": seed,
                    "hash": hashes[0],
                    "consistent": hashes.iter().all(|h| *h == hashes[0]),
                })
            })
            .collect();
        let failures: Vec<serde_json::Value> = self
            .solvers
            .iter()
            .flat_map(|s| {
                s.runs
                    .iter()
                    .filter(|r| r.status != RunStatus::Completed)
                    .map(move |r| serde_json::json!({"solver": s.solver, "seed": r.seed, "status": r.status}))
            })
            .collect();
        serde_json::json!({
            "experiment": self.experiment,
            "problem": self.problem,
            "penalty": self.penalty,
            "scale": [self.scale.0, self.scale.1],
            "parallel_scale": [self.parallel_scale.0, self.parallel_scale.1],
            "reference": {
                "solver": self.reference.solver,
                "seed": self.reference.seed,
                "eval_index": self.reference.record.eval_index,
                "f": self.reference.record.f,
                "x": self.reference.record.x,
            },
            "warm_start_value": self.warm_start_value,
            "budget_time_s": self.budget_time_s,
            "solvers": self.solvers.iter().map(|s| serde_json::json!({
                "solver": s.solver,
                "median_seed": s.median_seed,
                "runs": s.runs.iter().map(|r| serde_json::json!({
                    "seed": r.seed,
                    "n_records": r.n_records,
                    "status": r.status,
                    "final_best_valid": r.by_eval.last(),
                    "feasible": !r.key.infeasible,
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "doe": doe,
            "failures": failures,
        })
    }
}

/// Writes CSV tables, SVG figures and `manifest.json` into `out_dir`.
pub fn emit_plots(report: &ConvergenceReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("convergence_evals.csv".into(), report.convergence_evals_csv())?;
    put("convergence_time.csv".into(), report.convergence_time_csv())?;
    put("convergence_evals.svg".into(), svg::convergence_svg(report, svg::Axis::Evaluations))?;
    put("convergence_time.svg".into(), svg::convergence_svg(report, svg::Axis::Time))?;
    for s in &report.solvers {
        let stem = file_stem(&s.solver);
        put(format!("parallel_{stem}.csv"), report.parallel_csv(s))?;
        put(format!("parallel_{stem}.svg"), svg::parallel_svg(report, s))?;
    }
    put("manifest.json".into(), serde_json::to_string_pretty(&report.manifest())? + "\n")?;
    Ok(written)
}

/// Loads every `<solver>/<seed>/` trace under an experiment directory.
pub fn load_traces(experiment_dir: &Path) -> Result<Vec<RunTrace>> {
    let mut out = Vec::new();
    let mut solver_dirs: Vec<PathBuf> = fs::read_dir(experiment_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != "report"))
        .collect();
    solver_dirs.sort();
    for sd in solver_dirs {
        let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&sd)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(crate::trace::HISTORY_FILE).exists())
            .collect();
        seed_dirs.sort();
        for dir in seed_dirs {
            out.push(RunTrace::read(&dir)?);
        }
    }
    Ok(out)
}
