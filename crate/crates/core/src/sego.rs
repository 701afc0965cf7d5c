//! The constrained Bayesian optimization loop and its in-fill sub-problem.
//!
//! Each iteration trains one surrogate for the objective (a GP, a KPLS GP
//! above the dimension threshold, or a mixture of experts) and one GP per
//! constraint, then minimizes the acquisition over the region where every
//! feasibility margin is nonnegative, and evaluates the true functions at
//! the result.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    acquisition_from, active_tau, expected_improvement, expected_improvement_partials,
    wb2s_scale_from, AcquisitionKind, AcquisitionSpec, FeasibilityKind, FeasibilitySpec,
};
use crate::doe::{compare_records, inf_dist, Dataset};
use crate::error::{Error, Result};
use crate::optim::{minimize_box, LocalOptions, Objective};
use crate::problem::{EvalClock, OptimizationProblem};
use crate::surrogate::{fit_gp, fit_moe, GaussianProcessModel, GpOptions, Kernel, MixtureOfExperts, Recombination, Surrogate};
use crate::trace::{FallbackKind, IterationLog, RunStatus, RunTrace};
use crate::{seeded_rng, FEAS_TOL};

/// In-fill points closer than this to an existing point are replaced.
pub const DUPLICATE_GUARD_TOL: f64 = 1e-9;
const MARGIN_BUFFER: f64 = 1e-6;
const SCREEN_RHO: f64 = 0.15;
const POLISH_RHO: f64 = 0.05;
const POLISH_STARTS: usize = 2;

pub const SOLVER_NAMES: &[&str] = &["sego", "sego-utb", "segomoe", "segomoe-utb", "evol"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sego")]
    Sego,
    #[serde(rename = "sego-utb")]
    SegoUtb,
    #[serde(rename = "segomoe")]
    Segomoe,
    #[serde(rename = "segomoe-utb")]
    SegomoeUtb,
    #[serde(rename = "evol")]
    Evol,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sego => "sego",
            Variant::SegoUtb => "sego-utb",
            Variant::Segomoe => "segomoe",
            Variant::SegomoeUtb => "segomoe-utb",
            Variant::Evol => "evol",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sego" => Ok(Variant::Sego),
            "sego-utb" => Ok(Variant::SegoUtb),
            "segomoe" => Ok(Variant::Segomoe),
            "segomoe-utb" => Ok(Variant::SegomoeUtb),
            "evol" => Ok(Variant::Evol),
            _ => Err(Error::Config(format!(
                "unknown solver '{name}'; valid names: {}",
                SOLVER_NAMES.join(", ")
            ))),
        }
    }

    pub fn uses_moe(self) -> bool {
        matches!(self, Variant::Segomoe | Variant::SegomoeUtb)
    }

    pub fn uses_utb(self) -> bool {
        matches!(self, Variant::SegoUtb | Variant::SegomoeUtb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolverConfig {
    pub n_multistarts: usize,
    /// Acquisition evaluations per start; `None` means `100 * d`.
    pub local_budget: Option<usize>,
    /// Fraction of starts placed near the best evaluated points.
    pub start_mix: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            n_multistarts: 12,
            local_budget: None,
            start_mix: 0.25,
        }
    }
}

/// How hyperparameters are re-estimated from one iteration to the next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperRefit {
    /// Full multi-start on the first iteration, then a local search from the
    /// previous optimum and from the unit vector.
    #[default]
    Warm,
    /// Full multi-start every iteration.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    pub max_nb_it: usize,
    pub budget_total: usize,
    pub acquisition: AcquisitionSpec,
    pub feasibility: FeasibilitySpec,
    pub kernel: Kernel,
    pub kpls_threshold_dim: usize,
    pub kpls_components: usize,
    pub moe_max_experts: usize,
    pub recombination: Recombination,
    pub inner: InnerSolverConfig,
    pub hyper_refit: HyperRefit,
    pub seed: u64,
    pub clock: EvalClock,
    pub max_wall_time_s: Option<f64>,
    pub model_dump: bool,
}

/// Canonical configuration of a named solver variant.
pub fn make_variant(name: &str) -> Result<SolverConfig> {
    let variant = Variant::from_name(name)?;
    Ok(SolverConfig {
        variant,
        max_nb_it: 1,
        budget_total: 2,
        acquisition: AcquisitionSpec::default(),
        feasibility: if variant.uses_utb() {
            FeasibilitySpec::utb()
        } else {
            FeasibilitySpec::default()
        },
        kernel: Kernel::default(),
        kpls_threshold_dim: 12,
        kpls_components: 3,
        moe_max_experts: 3,
        recombination: Recombination::default(),
        inner: InnerSolverConfig::default(),
        hyper_refit: HyperRefit::default(),
        seed: 0,
        clock: EvalClock::default(),
        max_wall_time_s: None,
        model_dump: false,
    })
}

impl SolverConfig {
    /// Sets the enrichment count; the UTB horizon follows it.
    pub fn with_budget(mut self, initial_len: usize, max_nb_it: usize) -> Self {
        self.max_nb_it = max_nb_it;
        self.budget_total = initial_len + max_nb_it;
        self.feasibility.horizon = max_nb_it;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        self.feasibility.validate()?;
        if self.inner.n_multistarts == 0 {
            return Err(Error::Config("inner.n_multistarts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.inner.start_mix) {
            return Err(Error::Config("inner.start_mix must lie in [0, 1]".into()));
        }
        if self.moe_max_experts == 0 {
            return Err(Error::Config("moe_max_experts must be >= 1".into()));
        }
        if self.kpls_components == 0 {
            return Err(Error::Config("kpls_components must be >= 1".into()));
        }
        Ok(())
    }

    pub fn uses_kpls(&self, d: usize) -> bool {
        d > self.kpls_threshold_dim
    }
}

/// Objective surrogate of one iteration.
#[derive(Clone, Debug)]
pub enum ObjectiveModel {
    Gp(GaussianProcessModel),
    Moe(MixtureOfExperts),
}

impl ObjectiveModel {
    pub fn as_surrogate(&self) -> &dyn Surrogate {
        match self {
            ObjectiveModel::Gp(m) => m,
            ObjectiveModel::Moe(m) => m,
        }
    }

    fn theta(&self) -> Option<Vec<f64>> {
        match self {
            ObjectiveModel::Gp(m) => Some(m.theta().to_vec()),
            ObjectiveModel::Moe(m) => Some(m.dominant_theta().to_vec()),
        }
    }

    pub fn n_experts(&self) -> Option<usize> {
        match self {
            ObjectiveModel::Gp(_) => None,
            ObjectiveModel::Moe(m) => Some(m.n_experts()),
        }
    }

    fn dump(&self) -> serde_json::Value {
        match self {
            ObjectiveModel::Gp(m) => serde_json::to_value(m.dump()).unwrap_or_default(),
            ObjectiveModel::Moe(m) => serde_json::to_value(m.dump()).unwrap_or_default(),
        }
    }
}

pub struct IterationModels {
    pub objective: ObjectiveModel,
    pub constraints: Vec<GaussianProcessModel>,
}

const STREAM_FIT: u64 = 1;
const STREAM_SOLVE: u64 = 2;

/// Trains the objective and constraint surrogates of iteration `l`.
pub fn fit_models(dataset: &Dataset, config: &SolverConfig, l: usize, previous: &[Option<Vec<f64>>]) -> Result<IterationModels> {
    let xs: Vec<Vec<f64>> = dataset.points().map(|p| p.to_vec()).collect();
    let n = xs.len();
    let d = xs.first().map(Vec::len).unwrap_or(0);
    let m = dataset.records.first().map(|r| r.c.len()).unwrap_or(0);
    let kpls = config.uses_kpls(d).then_some(config.kpls_components);
    let opts = |j: usize| GpOptions {
        kernel: config.kernel,
        kpls_components: kpls,
        warm_start: match config.hyper_refit {
            HyperRefit::Warm => previous.get(j).cloned().flatten(),
            HyperRefit::Full => None,
        },
        ..Default::default()
    };
    let f: Vec<f64> = dataset.records.iter().map(|r| r.f).collect();
    let mut rng = seeded_rng(&[config.seed, l as u64, STREAM_FIT, 0]);
    let objective = if config.variant.uses_moe() && n >= 4 * config.moe_max_experts {
        ObjectiveModel::Moe(fit_moe(&xs, &f, config.moe_max_experts, config.recombination, &opts(0), &mut rng)?)
    } else {
        ObjectiveModel::Gp(fit_gp(&xs, &f, &opts(0), &mut rng)?)
    };
    let constraints = (0..m)
        .into_par_iter()
        .map(|j| {
            let c: Vec<f64> = dataset.records.iter().map(|r| r.c[j]).collect();
            let mut rng = seeded_rng(&[config.seed, l as u64, STREAM_FIT, 1 + j as u64]);
            fit_gp(&xs, &c, &opts(1 + j), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IterationModels { objective, constraints })
}

/// Inputs of the in-fill sub-problem.
pub struct Subproblem<'a> {
    pub objective: &'a dyn Surrogate,
    pub constraints: Vec<&'a dyn Surrogate>,
    /// Output scales used to normalize constraint margins.
    pub constraint_scales: Vec<f64>,
    pub f_min: f64,
    pub acquisition: AcquisitionSpec,
    pub feasibility: FeasibilitySpec,
    pub iteration: usize,
    /// Evaluated points, best first.
    pub ranked_points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub acquisition: f64,
    pub margins: Vec<f64>,
    pub wb2s_scale: f64,
    pub fallback: Option<FallbackKind>,
}

/// Objective whose value call also produces the gradient.
struct Analytic<F: FnMut(&[f64]) -> (f64, Vec<f64>)> {
    f: F,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Analytic<F> {
    fn new(f: F) -> Self {
        Self { f, last: None }
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for Analytic<F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        let (v, g) = (self.f)(x);
        self.last = Some((x.to_vec(), g));
        v
    }

    fn gradient(&mut self, x: &[f64], _fx: f64) -> Vec<f64> {
        match &self.last {
            Some((lx, g)) if lx.as_slice() == x => g.clone(),
            _ => {
                let (_, g) = (self.f)(x);
                g
            }
        }
    }

    fn gradient_cost(&self, _dim: usize) -> usize {
        0
    }
}

impl Subproblem<'_> {
    fn dim(&self) -> usize {
        self.ranked_points.first().map(Vec::len).unwrap_or(0)
    }

    fn tau(&self) -> f64 {
        active_tau(&self.feasibility, self.iteration)
    }

    /// Raw margins (UTB or mean feasibility).
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let tau = self.tau();
        self.constraints
            .iter()
            .map(|m| {
                if tau == 0.0 {
                    m.predict_mean(x)
                } else {
                    let (mu, s) = m.predict(x);
                    mu + tau * s
                }
            })
            .collect()
    }

    /// Squared shortfall of normalized margins below the buffer, and its gradient.
    fn shortfall(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let tau = self.tau();
        let d = x.len();
        let mut v = 0.0;
        let mut grad = vec![0.0; d];
        for (m, scale) in self.constraints.iter().zip(&self.constraint_scales) {
            let (val, g) = if tau == 0.0 || self.feasibility.kind == FeasibilityKind::MeanFeasibility {
                m.predict_mean_grad(x)
            } else {
                let (mu, s, dmu, ds) = m.predict_grad(x);
                (mu + tau * s, dmu.iter().zip(&ds).map(|(a, b)| a + tau * b).collect())
            };
            let short = MARGIN_BUFFER - val / scale;
            if short > 0.0 {
                v += short * short;
                for k in 0..d {
                    grad[k] -= 2.0 * short * g[k] / scale;
                }
            }
        }
        (v, grad)
    }

    fn acquisition(&self, x: &[f64], scale: f64) -> f64 {
        let (mu, s) = self.objective.predict(x);
        acquisition_from(&self.acquisition, mu, s, self.f_min, scale)
    }

    fn ei(&self, x: &[f64]) -> f64 {
        let (mu, s) = self.objective.predict(x);
        expected_improvement(mu, s, self.f_min)
    }

    /// COBYLA on the normalized acquisition with one inequality per constraint
    /// margin, normalized by the constraint scale and shifted by the buffer.
    fn constrained_search(&self, x0: &[f64], scale: f64, acq_norm: f64, max_evals: usize, rho: f64) -> Vec<f64> {
        let d = x0.len();
        let tau = self.tau();
        let cons: Vec<Box<dyn Fn(&[f64], &mut ()) -> f64 + '_>> = self
            .constraints
            .iter()
            .zip(&self.constraint_scales)
            .map(|(m, sc)| {
                Box::new(move |x: &[f64], _: &mut ()| {
                    let v = if tau == 0.0 {
                        m.predict_mean(x)
                    } else {
                        let (mu, s) = m.predict(x);
                        mu + tau * s
                    };
                    v / sc - MARGIN_BUFFER
                }) as Box<dyn Fn(&[f64], &mut ()) -> f64 + '_>
            })
            .collect();
        let f = |x: &[f64], _: &mut ()| self.acquisition(x, scale) / acq_norm;
        let tols = cobyla::StopTols {
            ftol_rel: 1e-8,
            xtol_abs: vec![1e-6; d],
            ..Default::default()
        };
        let bounds = vec![(0.0, 1.0); d];
        let x = match cobyla::minimize(f, x0, &bounds, &cons, (), max_evals, cobyla::RhoBeg::All(rho), Some(tols)) {
            Ok((_, x, _)) => x,
            Err((_, x, _)) => x,
        };
        x.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 }).collect()
    }

    /// Restores an infeasible end point and records its acquisition and margins.
    fn finish(&self, x: Vec<f64>, scale: f64, restore_budget: usize) -> (Vec<f64>, f64, Vec<f64>) {
        let mut x = x;
        let mut margins = self.margins(&x);
        if margins.iter().any(|m| *m < 0.0) {
            let r = self.restore(&x, restore_budget);
            let mr = self.margins(&r);
            if Self::violation(&mr) < Self::violation(&margins) {
                x = r;
                margins = mr;
            }
        }
        let a = self.acquisition(&x, scale);
        (x, a, margins)
    }

    fn violation(margins: &[f64]) -> f64 {
        margins.iter().map(|m| (-m).max(0.0)).sum()
    }

    fn restore(&self, x: &[f64], budget: usize) -> Vec<f64> {
        if self.constraints.is_empty() {
            return x.to_vec();
        }
        let d = x.len();
        let lo = vec![0.0; d];
        let hi = vec![1.0; d];
        let mut obj = Analytic::new(|p: &[f64]| self.shortfall(p));
        if obj.value(x) == 0.0 {
            return x.to_vec();
        }
        let r = minimize_box(
            &mut obj,
            x,
            &lo,
            &hi,
            &LocalOptions {
                max_evals: budget,
                gtol: 1e-12,
                ftol: 0.0,
                xtol: 1e-12,
                max_first_step: 0.1,
            },
        );
        r.x
    }
}

fn uniform_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// Solves the in-fill sub-problem: minimize the acquisition subject to
/// nonnegative feasibility margins, by multi-start bounded local search.
pub fn solve_subproblem<R: Rng + ?Sized>(sp: &Subproblem<'_>, inner: &InnerSolverConfig, rng: &mut R) -> SubproblemSolution {
    let d = sp.dim();
    let budget = inner.local_budget.unwrap_or(100 * d).max(10);
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];

    let n_near = ((inner.start_mix * inner.n_multistarts as f64).round() as usize).min(sp.ranked_points.len());
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(inner.n_multistarts);
    for p in sp.ranked_points.iter().take(n_near) {
        starts.push(p.iter().map(|v| (v + jitter.sample(rng)).clamp(0.0, 1.0)).collect());
    }
    while starts.len() < inner.n_multistarts {
        starts.push(uniform_point(d, rng));
    }

    let local = |max_evals: usize| LocalOptions {
        max_evals,
        gtol: 1e-7,
        ftol: 1e-10,
        xtol: 1e-8,
        max_first_step: 0.2,
    };

    // WB2S scale from the best expected-improvement candidate
    let mut scale = 1.0;
    if sp.acquisition.kind == AcquisitionKind::Wb2s {
        // candidates inside the approximated feasible domain take precedence
        let feasible = |c: &[f64]| sp.margins(c).iter().all(|&v| v >= 0.0);
        let mut best: Option<(bool, f64, Vec<f64>)> = None;
        let extra: Vec<Vec<f64>> = (0..100 * d).map(|_| uniform_point(d, rng)).collect();
        for c in starts.iter().chain(extra.iter()) {
            let (ok, e) = (feasible(c), sp.ei(c));
            if best.as_ref().map(|(bok, b, _)| (ok, e) > (*bok, *b)).unwrap_or(true) {
                best = Some((ok, e, c.clone()));
            }
        }
        let (cand_ok, _, cand) = best.expect("at least one candidate");
        let mut neg_ei = Analytic::new(|p: &[f64]| {
            let (mu, s, dmu, ds) = sp.objective.predict_grad(p);
            let (ei, de_mu, de_s) = expected_improvement_partials(mu, s, sp.f_min);
            (-ei, dmu.iter().zip(&ds).map(|(a, b)| -(de_mu * a + de_s * b)).collect())
        });
        let refined = minimize_box(&mut neg_ei, &cand, &lo, &hi, &local(budget));
        let keep = -refined.f >= sp.ei(&cand) && (!cand_ok || feasible(&refined.x));
        let cand = if keep { refined.x } else { cand };
        let (mu, s) = sp.objective.predict(&cand);
        scale = wb2s_scale_from(mu, expected_improvement(mu, s, sp.f_min), sp.acquisition.wb2s_beta);
    }

    // normalize the acquisition by its spread over the starts
    let acq_at: Vec<f64> = starts.iter().map(|s| sp.acquisition(s, scale)).collect();
    let mean = acq_at.iter().sum::<f64>() / acq_at.len() as f64;
    let spread = (acq_at.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acq_at.len() as f64).sqrt();
    let acq_norm = if spread > 1e-12 { spread } else { mean.abs().max(1e-12) };

    // short constrained local search from every start, then polish the best few
    let restore_budget = (budget / 4).max(10);
    let screen_budget = (budget / 10).max(2 * (d + 2));
    let mut ends: Vec<(Vec<f64>, f64, Vec<f64>)> = Vec::with_capacity(starts.len());
    for s in &starts {
        let x = sp.constrained_search(s, scale, acq_norm, screen_budget, SCREEN_RHO);
        ends.push(sp.finish(x, scale, restore_budget));
    }
    ends.sort_by(|a, b| {
        let (va, vb) = (Subproblem::violation(&a.2), Subproblem::violation(&b.2));
        (va > 0.0).cmp(&(vb > 0.0)).then(va.total_cmp(&vb)).then(a.1.total_cmp(&b.1))
    });
    for i in 0..POLISH_STARTS.min(ends.len()) {
        let x = sp.constrained_search(&ends[i].0, scale, acq_norm, budget / 2, POLISH_RHO);
        let polished = sp.finish(x, scale, restore_budget);
        let better = match (Subproblem::violation(&polished.2), Subproblem::violation(&ends[i].2)) {
            (0.0, 0.0) => polished.1 <= ends[i].1,
            (vp, ve) => vp < ve,
        };
        if better {
            ends[i] = polished;
        }
    }

    let feasible = ends
        .iter()
        .filter(|(_, _, m)| m.iter().all(|v| *v >= 0.0))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (mut x, mut acq, mut margins, mut fallback) = match feasible {
        Some((x, a, m)) => (x.clone(), *a, m.clone(), None),
        None => {
            let (x, a, m) = ends
                .iter()
                .min_by(|a, b| Subproblem::violation(&a.2).total_cmp(&Subproblem::violation(&b.2)))
                .expect("at least one start");
            (x.clone(), *a, m.clone(), Some(FallbackKind::NoFeasibleStart))
        }
    };

    if sp.ranked_points.iter().any(|p| inf_dist(p, &x) < DUPLICATE_GUARD_TOL) {
        let mut best: Option<(bool, f64, Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..1000 * d {
            let c = uniform_point(d, rng);
            if sp.ranked_points.iter().any(|p| inf_dist(p, &c) < DUPLICATE_GUARD_TOL) {
                continue;
            }
            let m = sp.margins(&c);
            let ok = m.iter().all(|v| *v >= 0.0);
            let key = if ok { sp.acquisition(&c, scale) } else { Subproblem::violation(&m) };
            let better = match &best {
                None => true,
                Some((bok, bkey, ..)) => (ok && !bok) || (ok == *bok && key < *bkey),
            };
            if better {
                let a = sp.acquisition(&c, scale);
                best = Some((ok, key, c, a, m));
            }
        }
        if let Some((_, _, c, a, m)) = best {
            x = c;
            acq = a;
            margins = m;
            fallback = Some(FallbackKind::DuplicateGuard);
        }
    }

    SubproblemSolution {
        x,
        acquisition: acq,
        margins,
        wb2s_scale: scale,
        fallback,
    }
}

/// Best feasible objective, or the lowest surrogate mean over the data when
/// nothing feasible has been evaluated.
pub fn current_f_min(dataset: &Dataset, objective: &dyn Surrogate) -> f64 {
    match dataset.best_feasible() {
        Some(r) => r.f,
        None => dataset
            .points()
            .map(|p| objective.predict_mean(p))
            .fold(f64::INFINITY, f64::min),
    }
}

fn column_std(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

/// Runs `config.max_nb_it` enrichment iterations from `initial`.
pub fn sego_run(problem: &OptimizationProblem, config: &SolverConfig, initial: Dataset) -> Result<RunTrace> {
    if config.variant == Variant::Evol {
        return Err(Error::Precondition("sego_run does not drive the evol solver".into()));
    }
    if initial.is_empty() {
        return Err(Error::Precondition("sego_run needs a non-empty initial design".into()));
    }
    config.validate()?;
    let start = Instant::now();
    let n_initial = initial.len();
    let mut dataset = initial;
    let mut log = Vec::with_capacity(config.max_nb_it);
    let mut previous: Vec<Option<Vec<f64>>> = vec![None; 1 + problem.n_constraints()];
    let mut status = RunStatus::Completed;
    let d = problem.dim();

    for l in 0..config.max_nb_it {
        if let Some(cap) = config.max_wall_time_s {
            if start.elapsed().as_secs_f64() >= cap {
                log::info!("{}: wall-time cap reached after {l} iterations", config.variant.name());
                status = RunStatus::Truncated;
                break;
            }
        }
        let t_fit = Instant::now();
        let fitted = fit_models(&dataset, config, l, &previous);
        let fit_time_s = t_fit.elapsed().as_secs_f64();

        let t_solve = Instant::now();
        let mut rng = seeded_rng(&[config.seed, l as u64, STREAM_SOLVE]);
        let tau = config.variant.uses_utb().then(|| active_tau(&config.feasibility, l));
        let (solution, n_experts, model) = match &fitted {
            Ok(models) => {
                previous[0] = models.objective.theta();
                for (j, c) in models.constraints.iter().enumerate() {
                    previous[1 + j] = Some(c.theta().to_vec());
                }
                let mut ranked: Vec<&crate::problem::EvaluationRecord> = dataset.records.iter().collect();
                ranked.sort_by(|a, b| compare_records(a, b, FEAS_TOL).then(a.eval_index.cmp(&b.eval_index)));
                let sp = Subproblem {
                    objective: models.objective.as_surrogate(),
                    constraints: models.constraints.iter().map(|c| c as &dyn Surrogate).collect(),
                    constraint_scales: (0..problem.n_constraints())
                        .map(|j| column_std(dataset.records.iter().map(|r| r.c[j])))
                        .collect(),
                    f_min: current_f_min(&dataset, models.objective.as_surrogate()),
                    acquisition: config.acquisition,
                    feasibility: config.feasibility,
                    iteration: l,
                    ranked_points: ranked.iter().map(|r| r.x.clone()).collect(),
                };
                let sol = solve_subproblem(&sp, &config.inner, &mut rng);
                let model = config.model_dump.then(|| {
                    serde_json::json!({
                        "objective": models.objective.dump(),
                        "constraints": models.constraints.iter().map(|c| c.dump()).collect::<Vec<_>>(),
                        "f_min": sp.f_min,
                        "wb2s_scale": sol.wb2s_scale,
                    })
                });
                (sol, models.objective.n_experts(), model)
            }
            Err(e) => {
                log::warn!("{}: surrogate fit failed at iteration {l}: {e}", config.variant.name());
                let mut x = uniform_point(d, &mut rng);
                while dataset.contains_point(&x, DUPLICATE_GUARD_TOL) {
                    x = uniform_point(d, &mut rng);
                }
                (
                    SubproblemSolution {
                        x,
                        acquisition: f64::NAN,
                        margins: Vec::new(),
                        wb2s_scale: 1.0,
                        fallback: Some(FallbackKind::FitFailure),
                    },
                    None,
                    None,
                )
            }
        };
        let solve_time_s = t_solve.elapsed().as_secs_f64();

        let t_eval = Instant::now();
        let first_eval = dataset.next_index();
        match problem.evaluate_with_clock(&solution.x, first_eval, config.clock) {
            Ok(rec) => dataset.push(rec),
            Err(e) => {
                status = RunStatus::Aborted(e.to_string());
                break;
            }
        }
        let eval_time_s = t_eval.elapsed().as_secs_f64();
        log::debug!(
            "{} seed {} it {l}: f = {:.6e}, fallback = {:?}",
            config.variant.name(),
            config.seed,
            dataset.records[first_eval].f,
            solution.fallback
        );
        log.push(IterationLog {
            iteration: l,
            x: solution.x,
            acquisition: solution.acquisition.is_finite().then_some(solution.acquisition),
            tau,
            step_size: None,
            fit_time_s,
            solve_time_s,
            eval_time_s,
            fallback: solution.fallback,
            first_eval,
            n_evals: 1,
            n_experts,
            model,
        });
    }

    Ok(RunTrace {
        solver: config.variant.name().to_string(),
        seed: config.seed,
        problem: problem.name().to_string(),
        n_initial,
        dataset,
        log,
        config: serde_json::to_value(config)?,
        status,
    })
}
