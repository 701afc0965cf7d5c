//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 2 5`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sego_core::acquisition::{expected_improvement, utb_tau};
use sego_core::benchmarks::{benchmark, map_design};
use sego_core::doe::{evaluate_points, lhs_sample, Dataset};
use sego_core::experiment::{best_feasible_design, run_experiment, ExperimentConfig, ExperimentOutcome};
use sego_core::reporting::{best_valid_series, experiment_penalty, median_run, scale01};
use sego_core::sego::{make_variant, sego_run, solve_subproblem, InnerSolverConfig, Subproblem};
use sego_core::surrogate::{fit_gp, GpOptions, Surrogate};
use sego_core::{
    AcquisitionKind, AcquisitionSpec, BudgetRule, EvalClock, EvaluationRecord, EvolConfig, FeasibilitySpec, Kernel,
    RunStatus, RunTrace, FEAS_TOL,
};

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------- shared runs

fn cmdo_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: "cmdo".into(),
        problem: "cmdo12".into(),
        n_seeds: 10,
        budget: BudgetRule::MultOfDim(20),
        evol: EvolConfig {
            max_evals: 960,
            ..Default::default()
        },
        out_dir: dir.to_path_buf(),
        eval_cost_s: Some(1.0),
        ..Default::default()
    }
}

struct Shared {
    dir: tempfile::TempDir,
    cmdo: Option<(ExperimentOutcome, f64)>,
}

impl Shared {
    fn cmdo(&mut self) -> &(ExperimentOutcome, f64) {
        if self.cmdo.is_none() {
            let t = Instant::now();
            let out = run_experiment(&cmdo_config(self.dir.path())).expect("cmdo experiment runs");
            self.cmdo = Some((out, t.elapsed().as_secs_f64()));
        }
        self.cmdo.as_ref().unwrap()
    }
}

// ---------------------------------------------------------------- criterion 1

fn protocol_counts(shared: &mut Shared) -> Outcome {
    let dir = shared.dir.path().to_path_buf();
    let (cmdo, cmdo_secs) = shared.cmdo();
    let mut problems = Vec::new();
    for t in &cmdo.traces {
        let want = if t.solver == "evol" { 973 } else { 240 };
        if t.records().len() != want || t.status != RunStatus::Completed {
            problems.push(format!("{} seed {}: {} records, {:?}", t.solver, t.seed, t.records().len(), t.status));
        }
    }
    let n_sego = cmdo.traces.iter().filter(|t| t.solver != "evol").count();
    let n_evol = cmdo.traces.len() - n_sego;

    // pmdo: warm start mapped from the best cmdo design
    let t = Instant::now();
    let warm = map_design(&best_feasible_design(&cmdo.traces).ok_or("no feasible cmdo design")?, 19);
    let pmdo = ExperimentConfig {
        name: "pmdo".into(),
        problem: "pmdo19".into(),
        solvers: vec!["sego".into(), "sego-utb".into(), "segomoe".into(), "segomoe-utb".into()],
        n_seeds: 1,
        budget: BudgetRule::MultOfDim(10),
        warm_start: Some(warm),
        out_dir: dir,
        eval_cost_s: Some(1.0),
        ..Default::default()
    };
    let out = run_experiment(&pmdo).map_err(|e| e.to_string())?;
    let pmdo_secs = t.elapsed().as_secs_f64();
    for t in &out.traces {
        if t.records().len() != 191 || t.n_initial != 21 {
            problems.push(format!("pmdo {}: {} records ({} initial)", t.solver, t.records().len(), t.n_initial));
        }
    }
    check(
        problems.is_empty() && n_sego == 40 && n_evol == 10,
        format!(
            "{n_sego} SEGO traces x 240, {n_evol} Evol traces x 973, {} pmdo traces x 191 (cmdo {cmdo_secs:.0} s shared with criterion 6, pmdo {pmdo_secs:.0} s)",
            out.traces.len()
        ),
        format!("count mismatches: {problems:?}"),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn oracle_corr(kernel: Kernel, theta: &[f64], a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        Kernel::SquaredExponential => (-(0..a.len()).map(|i| theta[i] * (a[i] - b[i]).powi(2)).sum::<f64>()).exp(),
        Kernel::Matern52 => (0..a.len())
            .map(|i| {
                let t = theta[i].sqrt() * (a[i] - b[i]).abs();
                (1.0 + 5f64.sqrt() * t + 5.0 / 3.0 * t * t) * (-(5f64.sqrt()) * t).exp()
            })
            .product(),
    }
}

/// Ordinary-kriging mean and simple-kriging standard deviation at fixed
/// hyperparameters, from the dense covariance.
fn oracle_predict(kernel: Kernel, theta: &[f64], x: &[Vec<f64>], y: &[f64], p: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nugget = 1e-10;
    let r: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| oracle_corr(kernel, theta, &x[i], &x[j]) + if i == j { nugget } else { 0.0 }).collect())
        .collect();
    let ones = dense_solve(r.clone(), vec![1.0; n]);
    let ry = dense_solve(r.clone(), y.to_vec());
    let beta = ry.iter().sum::<f64>() / ones.iter().sum::<f64>();
    let resid: Vec<f64> = y.iter().map(|v| v - beta).collect();
    let w = dense_solve(r.clone(), resid.clone());
    let sigma2 = resid.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let rp: Vec<f64> = x.iter().map(|xi| oracle_corr(kernel, theta, p, xi)).collect();
    let mu = beta + rp.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let v = dense_solve(r, rp.clone());
    let q: f64 = rp.iter().zip(&v).map(|(a, b)| a * b).sum();
    (mu, (sigma2 * (1.0 - q)).max(0.0).sqrt())
}

fn surrogate_correctness(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let d = rng.random_range(1..=19);
        let n = rng.random_range(d.max(3)..=40);
        let x = lhs_sample(n, d, case);
        let freq: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|p| p.iter().zip(&freq).map(|(v, w)| (w * v).sin() + 0.3 * v * v).sum::<f64>())
            .collect();
        let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        let kernel = if case % 2 == 0 { Kernel::Matern52 } else { Kernel::SquaredExponential };
        let gp = fit_gp(&x, &y, &GpOptions { kernel, ..Default::default() }, &mut rng).map_err(|e| e.to_string())?;
        for (p, v) in x.iter().zip(&y) {
            worst = worst.max((gp.predict_mean(p) - v).abs() / range);
        }
    }
    let mut oracle_err = 0.0f64;
    for case in 0..20u64 {
        let x = lhs_sample(8, 2, 100 + case);
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1] - p[0] * p[1]).collect();
        let kernel = if case % 2 == 0 { Kernel::Matern52 } else { Kernel::SquaredExponential };
        let theta = vec![rng.random_range(0.5..20.0), rng.random_range(0.5..20.0)];
        let opts = GpOptions {
            kernel,
            theta: Some(theta.clone()),
            ..Default::default()
        };
        let gp = fit_gp(&x, &y, &opts, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let (mu, s) = gp.predict(&p);
            let (mo, so) = oracle_predict(kernel, &theta, &x, &y, &p);
            oracle_err = oracle_err.max((mu - mo).abs()).max((s - so).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && oracle_err <= 1e-8 && secs < 60.0,
        format!("max interpolation error {worst:.2e} x range over 50 datasets, max dense-oracle deviation {oracle_err:.2e} ({secs:.1} s)"),
        format!("interpolation {worst:.2e} (limit 1e-6), oracle {oracle_err:.2e} (limit 1e-8), {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn acquisition_oracle(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_z = 0.0f64;
    let mut sum_z2 = 0.0f64;
    for _ in 0..50 {
        let mu: f64 = rng.random_range(-5.0..5.0);
        let sigma: f64 = rng.random_range(0.1..3.0);
        let f_min = mu + sigma * rng.random_range(-2.5..2.5);
        let n = 10_000_000usize;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let imp = (f_min - mu - sigma * z).max(0.0);
            s += imp;
            s2 += imp * imp;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        let z = (expected_improvement(mu, sigma, f_min) - mean) / se;
        worst_z = worst_z.max(z.abs());
        sum_z2 += z * z;
    }
    // with an exact EI, some |z| of 50 exceeds 3 about 13% of the time
    let rms_z = (sum_z2 / 50.0).sqrt();

    let mut worst_dx = 0.0f64;
    let mut worse_value = 0usize;
    for case in 0..10u64 {
        let n = rng.random_range(3..=7);
        let x: Vec<Vec<f64>> = lhs_sample(n, 1, 300 + case);
        let a = rng.random_range(2.0..12.0);
        let y: Vec<f64> = x.iter().map(|p| (a * p[0]).sin() + 0.5 * p[0]).collect();
        let gp = fit_gp(&x, &y, &GpOptions::default(), &mut rng).map_err(|e| e.to_string())?;
        let f_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut ranked = x.clone();
        ranked.sort_by(|p, q| gp.predict_mean(p).total_cmp(&gp.predict_mean(q)));
        let sp = Subproblem {
            objective: &gp,
            constraints: vec![],
            constraint_scales: vec![],
            f_min,
            acquisition: AcquisitionSpec {
                kind: AcquisitionKind::Ei,
                ..Default::default()
            },
            feasibility: FeasibilitySpec::default(),
            iteration: 0,
            ranked_points: ranked,
        };
        let sol = solve_subproblem(&sp, &InnerSolverConfig::default(), &mut ChaCha8Rng::seed_from_u64(case));
        let ei = |v: f64| {
            let (m, s) = gp.predict(&[v]);
            expected_improvement(m, s, f_min)
        };
        let grid = (0..=2000).map(|i| i as f64 / 2000.0).max_by(|p, q| ei(*p).total_cmp(&ei(*q))).unwrap();
        worst_dx = worst_dx.max((sol.x[0] - grid).abs());
        if ei(sol.x[0]) < ei(grid) * (1.0 - 1e-9) {
            worse_value += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst_z <= 3.0 && worst_dx <= 5e-4 && secs < 120.0,
        format!("EI within {worst_z:.2} standard errors of 1e7-sample Monte Carlo on 50 triples; sub-problem argmin within {worst_dx:.1e} of the 2001-point grid on 10 posteriors ({secs:.1} s)"),
        format!("worst z {worst_z:.2} (limit 3, rms z {rms_z:.2}), worst grid distance {worst_dx:.2e} (limit 5e-4, {worse_value} solutions with lower EI than the grid), {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn utb_schedule(_: &mut Shared) -> Outcome {
    let mut errors = Vec::new();
    for (tau0, frac, horizon) in [(3.0, 0.01, 227usize), (3.0, 0.01, 170), (2.0, 0.1, 50), (5.0, 0.001, 1000)] {
        let spec = FeasibilitySpec {
            tau0,
            tau_end_fraction: frac,
            horizon,
            ..FeasibilitySpec::utb()
        };
        if (utb_tau(&spec, 0) - tau0).abs() > 1e-12 {
            errors.push(format!("tau(0) = {}", utb_tau(&spec, 0)));
        }
        if (utb_tau(&spec, horizon) - tau0 * frac).abs() > 1e-12 {
            errors.push(format!("tau(horizon) = {}", utb_tau(&spec, horizon)));
        }
        if (0..horizon).any(|l| utb_tau(&spec, l + 1) >= utb_tau(&spec, l)) {
            errors.push(format!("not strictly decreasing for horizon {horizon}"));
        }
    }

    // fixed constraint models of the 10-D benchmark
    let p = benchmark("g07").map_err(|e| e.to_string())?;
    let ds = evaluate_points(&p, &lhs_sample(30, p.dim(), 4), 4, EvalClock::Measured).map_err(|e| e.to_string())?;
    let x: Vec<Vec<f64>> = ds.points().map(|v| v.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models: Vec<_> = (0..p.n_constraints())
        .map(|j| {
            let y: Vec<f64> = ds.records.iter().map(|r| r.c[j]).collect();
            fit_gp(&x, &y, &GpOptions::default(), &mut rng)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let objective = fit_gp(&x, &ds.records.iter().map(|r| r.f).collect::<Vec<_>>(), &GpOptions::default(), &mut rng)
        .map_err(|e| e.to_string())?;
    let make = |feasibility: FeasibilitySpec, iteration: usize| Subproblem {
        objective: &objective,
        constraints: models.iter().map(|m| m as &dyn Surrogate).collect(),
        constraint_scales: vec![1.0; models.len()],
        f_min: 0.0,
        acquisition: AcquisitionSpec::default(),
        feasibility,
        iteration,
        ranked_points: x.clone(),
    };
    let utb_spec = FeasibilitySpec {
        horizon: 100,
        ..FeasibilitySpec::utb()
    };
    let mean = make(FeasibilitySpec::default(), 0);
    let mut violations = 0usize;
    let mut utb_only = 0usize;
    for k in 0..10_000 {
        let pt: Vec<f64> = (0..p.dim()).map(|_| rng.random::<f64>()).collect();
        let utb = make(utb_spec, k % 101);
        let (mm, mu) = (mean.margins(&pt), utb.margins(&pt));
        if mm.iter().zip(&mu).any(|(a, b)| b < a) {
            violations += 1;
        }
        let feas_mean = mm.iter().all(|v| *v >= 0.0);
        let feas_utb = mu.iter().all(|v| *v >= 0.0);
        if feas_mean && !feas_utb {
            violations += 1;
        }
        if feas_utb && !feas_mean {
            utb_only += 1;
        }
    }
    if violations > 0 {
        errors.push(format!("{violations} points where the UTB margin is below the mean margin"));
    }
    check(
        errors.is_empty(),
        format!("schedule endpoints within 1e-12 and strictly decreasing on 4 schedules; UTB region contains the mean region on 1e4 points ({utb_only} points feasible under UTB only)"),
        errors.join("; "),
    )
}

// ---------------------------------------------------------------- criterion 5

fn brute_best_valid(records: &[EvaluationRecord], penalty: f64) -> Vec<f64> {
    (0..records.len())
        .map(|k| {
            let mut feas: Vec<f64> = records[..=k].iter().filter(|r| r.c.iter().all(|c| *c >= -FEAS_TOL)).map(|r| r.f).collect();
            feas.sort_by(f64::total_cmp);
            feas.first().copied().unwrap_or(penalty)
        })
        .collect()
}

fn brute_penalty(runs: &[Vec<EvaluationRecord>]) -> Option<f64> {
    let mut feas: Vec<f64> = runs
        .iter()
        .flatten()
        .filter(|r| r.c.iter().all(|c| *c >= -FEAS_TOL))
        .map(|r| r.f)
        .collect();
    feas.sort_by(f64::total_cmp);
    feas.last().copied()
}

fn brute_scale(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<f64> = series.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let (lo, hi) = (all[0], all[all.len() - 1]);
    series
        .iter()
        .map(|s| s.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect())
        .collect()
}

fn brute_median(runs: &[(u64, Vec<EvaluationRecord>)]) -> u64 {
    // rank = (infeasible?, key value, seed); feasible runs by best objective,
    // infeasible runs by smallest L1 violation
    let mut ranked: Vec<(bool, f64, u64)> = runs
        .iter()
        .map(|(seed, recs)| {
            let feas: Vec<f64> = recs.iter().filter(|r| r.c.iter().all(|c| *c >= -FEAS_TOL)).map(|r| r.f).collect();
            if feas.is_empty() {
                let v = recs.iter().map(|r| r.c.iter().map(|c| (-c).max(0.0)).sum::<f64>()).fold(f64::INFINITY, f64::min);
                (true, v, *seed)
            } else {
                (false, feas.iter().cloned().fold(f64::INFINITY, f64::min), *seed)
            }
        })
        .collect();
    for i in 0..ranked.len() {
        for j in 0..ranked.len() - 1 - i {
            let (a, b) = (ranked[j], ranked[j + 1]);
            let greater = a.0 & !b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 > b.2)));
            if greater {
                ranked.swap(j, j + 1);
            }
        }
    }
    ranked[ranked.len() / 2].2
}

fn random_history(rng: &mut ChaCha8Rng, feasible_prob: f64) -> Vec<EvaluationRecord> {
    let n = rng.random_range(1..60);
    (0..n)
        .map(|i| {
            let feasible = rng.random::<f64>() < feasible_prob;
            EvaluationRecord {
                x: vec![rng.random(), rng.random()],
                // a coarse grid of values makes ties common
                f: (rng.random_range(-40..40) as f64) * 0.25,
                c: (0..2)
                    .map(|_| if feasible { rng.random_range(0.0..1.0) } else { rng.random_range(-1.0..0.5) })
                    .collect(),
                eval_index: i,
                wall_time_s: 1.0,
            }
        })
        .collect()
}

fn reporting_equivalence(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut errors = Vec::new();
    for case in 0..100 {
        let n_runs = rng.random_range(1..8);
        let p = [0.0, 0.05, 0.3, 0.8][case % 4];
        let runs: Vec<Vec<EvaluationRecord>> = (0..n_runs).map(|_| random_history(&mut rng, p)).collect();
        let penalty = experiment_penalty(runs.iter().map(|r| r.as_slice())).ok();
        if penalty != brute_penalty(&runs) {
            errors.push(format!("case {case}: penalty {penalty:?}"));
        }
        let pen = penalty.unwrap_or(1e3);
        let series: Vec<Vec<f64>> = runs.iter().map(|r| best_valid_series(r, pen)).collect();
        for (r, s) in runs.iter().zip(&series) {
            if *s != brute_best_valid(r, pen) {
                errors.push(format!("case {case}: best-valid series"));
            }
        }
        let scaled = scale01(&series);
        let brute = brute_scale(&series);
        if scaled.iter().flatten().zip(brute.iter().flatten()).any(|(a, b)| (a - b).abs() > 1e-12) {
            errors.push(format!("case {case}: scaling"));
        }
        let traces: Vec<RunTrace> = runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let seed = (i as u64 * 7919) % 11;
                let mut ds = Dataset::new("synthetic", seed);
                r.iter().cloned().for_each(|rec| ds.push(rec));
                RunTrace {
                    solver: "sego".into(),
                    seed: seed + 100 * i as u64,
                    problem: "synthetic".into(),
                    n_initial: 1,
                    dataset: ds,
                    log: vec![],
                    config: serde_json::Value::Null,
                    status: RunStatus::Completed,
                }
            })
            .collect();
        let refs: Vec<&RunTrace> = traces.iter().collect();
        let got = traces[median_run(&refs)].seed;
        let keyed: Vec<(u64, Vec<EvaluationRecord>)> = traces.iter().map(|t| (t.seed, t.records().to_vec())).collect();
        if got != brute_median(&keyed) {
            errors.push(format!("case {case}: median seed {got} vs {}", brute_median(&keyed)));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        errors.is_empty() && secs < 30.0,
        format!("series, penalty, scaling and median agree with brute force on 100 synthetic experiments ({secs:.2} s)"),
        format!("{} mismatches: {:?}", errors.len(), errors.iter().take(5).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------- criterion 6

fn solver_ordering(shared: &mut Shared) -> Outcome {
    let (out, secs) = shared.cmdo();
    let report = &out.report;
    let evol = report.solver("evol").ok_or("no evol runs")?;
    let mut evol_at: Vec<f64> = evol.runs.iter().map(|r| r.by_eval[239]).collect();
    let evol_median = median(&mut evol_at);
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["sego", "sego-utb", "segomoe", "segomoe-utb"] {
        let s = report.solver(name).ok_or(format!("no {name} runs"))?;
        let mut finals: Vec<f64> = s.runs.iter().map(|r| r.by_eval[239]).collect();
        let m = median(&mut finals);
        let feasible = out
            .traces
            .iter()
            .filter(|t| t.solver == name && t.records().iter().any(|r| r.is_feasible(FEAS_TOL)))
            .count();
        ok &= m < evol_median && feasible >= 8;
        lines.push(format!("{name} median {m:.4} feasible {feasible}/10"));
    }
    let summary = format!(
        "{}; evol median at 240 evals {evol_median:.4} (penalty {:.4}, {secs:.0} s)",
        lines.join(", "),
        report.penalty
    );
    check(ok, summary.clone(), summary)
}

// ---------------------------------------------------------------- criterion 7

fn convergence_quality(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        name: "branin".into(),
        problem: "branin-c".into(),
        solvers: vec!["sego".into()],
        n_seeds: 10,
        budget: BudgetRule::Fixed(40),
        out_dir: shared.dir.path().to_path_buf(),
        eval_cost_s: Some(1.0),
        ..Default::default()
    };
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let opt = benchmark("branin-c").unwrap().known_optimum().unwrap().value;
    let errs: Vec<f64> = out
        .traces
        .iter()
        .map(|t| {
            t.records()
                .iter()
                .filter(|r| r.is_feasible(FEAS_TOL))
                .map(|r| (r.f - opt).abs() / opt.abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let hits = errs.iter().filter(|e| **e <= 0.01).count();
    let secs = t.elapsed().as_secs_f64();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    check(
        hits >= 9 && secs < 300.0,
        format!("{hits}/10 seeds within 1% of the known optimum {opt:.6} (worst relative error {worst:.2e}, {secs:.1} s)"),
        format!("{hits}/10 seeds within 1%, relative errors {errs:?}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn histories(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "history.jsonl") {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(shared: &mut Shared) -> Outcome {
    let mut errors = Vec::new();
    let base = ExperimentConfig {
        name: "repeat".into(),
        problem: "g07".into(),
        solvers: vec!["sego".into(), "sego-utb".into(), "segomoe".into(), "segomoe-utb".into(), "evol".into()],
        n_seeds: 2,
        budget: BudgetRule::Fixed(25),
        evol: EvolConfig {
            max_evals: 30,
            batch_size: 4,
            ..Default::default()
        },
        eval_cost_s: Some(1.0),
        ..Default::default()
    };
    let mut runs = Vec::new();
    for k in 0..2 {
        let cfg = ExperimentConfig {
            out_dir: shared.dir.path().join(format!("repeat{k}")),
            ..base.clone()
        };
        run_experiment(&cfg).map_err(|e| e.to_string())?;
        runs.push(histories(&cfg.experiment_dir()));
    }
    if runs[0].len() != 10 || runs[0] != runs[1] {
        errors.push(format!("{} vs {} history files differ", runs[0].len(), runs[1].len()));
    }

    for (problem, seed, budget) in [("branin-c", 0u64, 20usize), ("g07", 1, 22), ("toy-quad", 2, 15)] {
        let p = benchmark(problem).unwrap();
        let n_lhs = p.dim() + 1;
        let clock = EvalClock::Simulated { cost_s: 1.0 };
        let initial = evaluate_points(&p, &lhs_sample(n_lhs, p.dim(), seed), seed, clock).unwrap();
        let mut sego = make_variant("sego").unwrap().with_budget(n_lhs, budget - n_lhs).with_seed(seed);
        sego.clock = clock;
        let mut moe = make_variant("segomoe").unwrap().with_budget(n_lhs, budget - n_lhs).with_seed(seed);
        moe.clock = clock;
        moe.moe_max_experts = 1;
        let a = sego_run(&p, &sego, initial.clone()).map_err(|e| e.to_string())?;
        let b = sego_run(&p, &moe, initial).map_err(|e| e.to_string())?;
        if a.records() != b.records() {
            let first = a.records().iter().zip(b.records()).position(|(x, y)| x != y);
            errors.push(format!("{problem} seed {seed}: single-expert mixture diverges at {first:?}"));
        }
    }
    check(
        errors.is_empty(),
        "10 repeated histories byte-identical; single-expert SEGOMOE equals SEGO on branin-c/0, g07/1, toy-quad/2".into(),
        errors.join("; "),
    )
}

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn(&mut Shared) -> Outcome); 8] = [
        (1, "protocol exactness", protocol_counts),
        (2, "surrogate correctness", surrogate_correctness),
        (3, "acquisition oracle", acquisition_oracle),
        (4, "UTB schedule", utb_schedule),
        (5, "reporting equivalence", reporting_equivalence),
        (6, "solver ordering on the 12-D benchmark", solver_ordering),
        (7, "convergence quality", convergence_quality),
        (8, "determinism and reduction", determinism),
    ];
    let mut shared = Shared {
        dir: tempfile::tempdir().expect("temporary directory"),
        cmdo: None,
    };
    let mut failed = 0;
    // criteria sharing the long experiment run last, cheap ones first
    let order = [2, 3, 4, 5, 7, 8, 6, 1];
    for id in order {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let (_, name, f) = criteria[id - 1];
        let result = catch_unwind(AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panic".into())));
        match result {
            Ok(msg) => println!("PASS criterion {id} ({name}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
