//! Python bindings: benchmark problems, Latin hypercube sampling, kriging
//! fits, the acquisition building blocks and single solver runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use sego_core::acquisition;
use sego_core::benchmarks::{benchmark, benchmark_suite};
use sego_core::doe::{evaluate_points, incumbent_of, lhs_sample_with};
use sego_core::evol::{evol_run, EvolConfig};
use sego_core::sego::{make_variant, sego_run, SOLVER_NAMES};
use sego_core::surrogate::{fit_gp, GpOptions};
use sego_core::{
    EvalClock, Error, EvaluationRecord, FeasibilitySpec, GaussianProcessModel, Kernel, OptimizationProblem, RunTrace,
    FEAS_TOL,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain { .. } | Error::Dimension { .. } | Error::Precondition(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_kernel(name: &str) -> PyResult<Kernel> {
    match name {
        "matern52" => Ok(Kernel::Matern52),
        "squared_exponential" | "se" => Ok(Kernel::SquaredExponential),
        _ => Err(PyValueError::new_err(format!("unknown kernel '{name}'"))),
    }
}

/// One evaluated design in normalized coordinates.
#[pyclass(name = "Record", frozen, get_all, from_py_object)]
#[derive(Clone)]
struct PyRecord {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    eval_index: usize,
    wall_time_s: f64,
}

#[pymethods]
impl PyRecord {
    fn is_feasible(&self) -> bool {
        EvaluationRecord::from(self).is_feasible(FEAS_TOL)
    }

    fn violation(&self) -> f64 {
        EvaluationRecord::from(self).violation()
    }

    fn __repr__(&self) -> String {
        format!("Record(eval_index={}, f={}, feasible={})", self.eval_index, self.f, self.is_feasible())
    }
}

impl From<&EvaluationRecord> for PyRecord {
    fn from(r: &EvaluationRecord) -> Self {
        Self {
            x: r.x.clone(),
            f: r.f,
            c: r.c.clone(),
            eval_index: r.eval_index,
            wall_time_s: r.wall_time_s,
        }
    }
}

impl From<&PyRecord> for EvaluationRecord {
    fn from(r: &PyRecord) -> Self {
        Self {
            x: r.x.clone(),
            f: r.f,
            c: r.c.clone(),
            eval_index: r.eval_index,
            wall_time_s: r.wall_time_s,
        }
    }
}

/// A benchmark problem looked up by name.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: OptimizationProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: benchmark(name).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.inner.lower().to_vec()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.inner.upper().to_vec()
    }

    /// `(x_normalized, value)` of the known optimum, if any.
    #[getter]
    fn known_optimum(&self) -> PyResult<Option<(Vec<f64>, f64)>> {
        match self.inner.known_optimum() {
            Some(o) => Ok(Some((self.inner.normalize(&o.point).map_err(py_err)?, o.value))),
            None => Ok(None),
        }
    }

    fn normalize(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.normalize(&x).map_err(py_err)
    }

    fn denormalize(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.denormalize(&x).map_err(py_err)
    }

    /// Objective and canonical constraints at a normalized point.
    fn evaluate(&self, x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let r = self
            .inner
            .evaluate_with_clock(&x, 0, EvalClock::Simulated { cost_s: 0.0 })
            .map_err(py_err)?;
        Ok((r.f, r.c))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem('{}', dim={}, n_constraints={})",
            self.inner.name(),
            self.inner.dim(),
            self.inner.n_constraints()
        )
    }
}

/// A fitted kriging model.
#[pyclass(name = "GaussianProcess", frozen)]
struct PyGp {
    inner: GaussianProcessModel,
}

#[pymethods]
impl PyGp {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood()
    }

    #[getter]
    fn nugget(&self) -> f64 {
        self.inner.nugget()
    }

    /// Posterior mean and standard deviation.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        if x.len() != self.inner.dim() {
            return Err(py_err(Error::Dimension {
                expected: self.inner.dim(),
                got: x.len(),
            }));
        }
        Ok(self.inner.predict(&x))
    }
}

#[pyfunction]
fn problems() -> Vec<String> {
    benchmark_suite().iter().map(|p| p.name().to_string()).collect()
}

#[pyfunction]
fn solvers() -> Vec<String> {
    SOLVER_NAMES.iter().map(|s| s.to_string()).collect()
}

#[pyfunction]
#[pyo3(signature = (n, d, seed, centered = false))]
fn lhs_sample(n: usize, d: usize, seed: u64, centered: bool) -> Vec<Vec<f64>> {
    lhs_sample_with(n, d, seed, centered)
}

#[pyfunction]
#[pyo3(signature = (x, y, kernel = "matern52", kpls_components = None, seed = 0))]
fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: &str, kpls_components: Option<usize>, seed: u64) -> PyResult<PyGp> {
    let opts = GpOptions {
        kernel: parse_kernel(kernel)?,
        kpls_components,
        ..Default::default()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(PyGp {
        inner: fit_gp(&x, &y, &opts, &mut rng).map_err(py_err)?,
    })
}

#[pyfunction]
fn expected_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    acquisition::expected_improvement(mu, sigma, f_min)
}

/// Upper-trust-bound parameter at iteration `l`.
#[pyfunction]
#[pyo3(signature = (l, horizon, tau0 = 3.0, tau_end_fraction = 0.01))]
fn utb_tau(l: usize, horizon: usize, tau0: f64, tau_end_fraction: f64) -> f64 {
    let spec = FeasibilitySpec {
        tau0,
        tau_end_fraction,
        horizon,
        ..FeasibilitySpec::utb()
    };
    acquisition::utb_tau(&spec, l)
}

/// Best record: feasible first, then lowest objective; lowest violation if
/// nothing is feasible.
#[pyfunction]
fn incumbent(records: Vec<PyRecord>) -> Option<PyRecord> {
    let recs: Vec<EvaluationRecord> = records.iter().map(EvaluationRecord::from).collect();
    incumbent_of(&recs, FEAS_TOL).map(PyRecord::from)
}

/// Runs one solver from a seeded Latin hypercube of `d + 1` points
/// (or `n_doe`) for `budget` evaluations in total, including the design.
/// Returns every evaluated record in order.
#[pyfunction]
#[pyo3(signature = (problem, solver, budget, seed = 0, n_doe = None))]
fn run_solver(
    py: Python<'_>,
    problem: &PyProblem,
    solver: &str,
    budget: usize,
    seed: u64,
    n_doe: Option<usize>,
) -> PyResult<Vec<PyRecord>> {
    let p = &problem.inner;
    let n_lhs = n_doe.unwrap_or(p.dim() + 1);
    if budget <= n_lhs {
        return Err(PyValueError::new_err(format!(
            "budget {budget} must exceed the initial design size {n_lhs}"
        )));
    }
    let solver = solver.to_string();
    let trace: RunTrace = py
        .detach(|| {
            let clock = EvalClock::Simulated { cost_s: 0.0 };
            let initial = evaluate_points(p, &lhs_sample_with(n_lhs, p.dim(), seed, false), seed, clock)?;
            if solver == "evol" {
                let cfg = EvolConfig {
                    max_evals: budget - n_lhs,
                    clock,
                    ..Default::default()
                };
                evol_run(p, &cfg, initial, seed)
            } else {
                let mut cfg = make_variant(&solver)?.with_budget(n_lhs, budget - n_lhs).with_seed(seed);
                cfg.clock = clock;
                sego_run(p, &cfg, initial)
            }
        })
        .map_err(py_err)?;
    Ok(trace.records().iter().map(PyRecord::from).collect())
}

#[pymodule]
fn sego(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyGp>()?;
    m.add_function(wrap_pyfunction!(problems, m)?)?;
    m.add_function(wrap_pyfunction!(solvers, m)?)?;
    m.add_function(wrap_pyfunction!(lhs_sample, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(expected_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(utb_tau, m)?)?;
    m.add_function(wrap_pyfunction!(incumbent, m)?)?;
    m.add_function(wrap_pyfunction!(run_solver, m)?)?;
    m.add("FEAS_TOL", FEAS_TOL)?;
    Ok(())
}
