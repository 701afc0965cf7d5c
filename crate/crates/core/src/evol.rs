//! Evolution-strategy baseline: mutate the best known point with adaptive
//! normal perturbations, with a repeat-calculation check, step expansion,
//! a periodic single-coordinate search and concurrent batch evaluation.

use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::{compare_records, incumbent, inf_dist, Dataset};
use crate::error::{Error, Result};
use crate::problem::{EvalClock, EvaluationRecord, OptimizationProblem};
use crate::seeded_rng;
use crate::trace::{IterationLog, RunStatus, RunTrace};
use crate::FEAS_TOL;

const SIGMA_MIN: f64 = 1e-6;
const SIGMA_MAX: f64 = 1.0;
const MAX_REDRAWS: usize = 100;
const MAX_EXPANSIONS: usize = 64;
const STREAM_EVOL: u64 = 0xE7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolConfig {
    pub sigma0: f64,
    pub adapt_factor: f64,
    pub success_target: f64,
    pub batch_size: usize,
    pub expansion_factor: f64,
    pub repeat_tol: f64,
    /// Evaluations between single-coordinate moves; `None` means `5 * d`.
    pub consecutive_search_period: Option<usize>,
    /// Evaluations after the initial design.
    pub max_evals: usize,
    pub clock: EvalClock,
    pub max_wall_time_s: Option<f64>,
}

impl Default for EvolConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.1,
            adapt_factor: 1.22,
            success_target: 0.2,
            batch_size: 1,
            expansion_factor: 2.0,
            repeat_tol: 1e-12,
            consecutive_search_period: None,
            max_evals: 100,
            clock: EvalClock::default(),
            max_wall_time_s: None,
        }
    }
}

impl EvolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config(format!("evol.sigma0 must be positive, got {}", self.sigma0)));
        }
        if !(self.adapt_factor > 1.0) || !(self.expansion_factor > 1.0) {
            return Err(Error::Config("evol adapt_factor and expansion_factor must exceed 1".into()));
        }
        if !(self.success_target > 0.0 && self.success_target < 1.0) {
            return Err(Error::Config(format!(
                "evol.success_target must lie in (0, 1), got {}",
                self.success_target
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("evol.batch_size must be >= 1".into()));
        }
        if self.max_evals == 0 {
            return Err(Error::Config("evol.max_evals must be >= 1".into()));
        }
        if self.consecutive_search_period == Some(0) {
            return Err(Error::Config("evol.consecutive_search_period must be >= 1".into()));
        }
        Ok(())
    }

    fn failure_divisor(&self) -> f64 {
        self.adapt_factor.powf(self.success_target / (1.0 - self.success_target))
    }
}

/// Runs the strategy from the incumbent of `initial` for `config.max_evals`
/// evaluations. The returned dataset keeps the initial records in front.
pub fn evol_run(problem: &OptimizationProblem, config: &EvolConfig, initial: Dataset, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let start_record = incumbent(&initial)?.clone();
    let d = problem.dim();
    let period = config.consecutive_search_period.unwrap_or(5 * d).max(1);
    let divisor = config.failure_divisor();
    let mut rng = seeded_rng(&[seed, STREAM_EVOL]);
    let clock_start = Instant::now();

    let n_initial = initial.len();
    let mut dataset = initial;
    let mut best = start_record;
    let mut sigma = config.sigma0.clamp(SIGMA_MIN, SIGMA_MAX);
    let mut done = 0usize;
    let mut coord = 0usize;
    let mut log = Vec::new();
    let mut status = RunStatus::Completed;

    while done < config.max_evals {
        if let Some(cap) = config.max_wall_time_s {
            if clock_start.elapsed().as_secs_f64() >= cap {
                status = RunStatus::Truncated;
                break;
            }
        }
        let t_gen = Instant::now();
        let k = config.batch_size.min(config.max_evals - done);
        let mut batch: Vec<Vec<f64>> = Vec::with_capacity(k);
        for i in 0..k {
            let single = (done + i + 1) % period == 0;
            let j = coord % d;
            if single {
                coord += 1;
            }
            let mut draws = 0;
            let mut expansions = 0;
            let cand = loop {
                let c = mutate(&best.x, sigma, single.then_some(j), &mut rng);
                let repeated = dataset.points().any(|p| inf_dist(p, &c) < config.repeat_tol)
                    || batch.iter().any(|p| inf_dist(p, &c) < config.repeat_tol);
                if !repeated {
                    break c;
                }
                draws += 1;
                if draws >= MAX_REDRAWS {
                    draws = 0;
                    expansions += 1;
                    sigma = (sigma * config.expansion_factor).min(SIGMA_MAX);
                    if expansions > MAX_EXPANSIONS {
                        break (0..d).map(|_| rng.random::<f64>()).collect();
                    }
                }
            };
            batch.push(cand);
        }
        let solve_time_s = t_gen.elapsed().as_secs_f64();

        let t_eval = Instant::now();
        let first_eval = dataset.next_index();
        let results: Vec<Result<EvaluationRecord>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, x)| problem.evaluate_with_clock(x, first_eval + i, config.clock))
            .collect();
        let eval_time_s = t_eval.elapsed().as_secs_f64();

        let mut committed = 0;
        let mut gen_best: Option<EvaluationRecord> = None;
        for r in results {
            match r {
                Ok(rec) => {
                    if gen_best
                        .as_ref()
                        .map(|b| compare_records(&rec, b, FEAS_TOL) == Ordering::Less)
                        .unwrap_or(true)
                    {
                        gen_best = Some(rec.clone());
                    }
                    dataset.push(rec);
                    committed += 1;
                }
                Err(e) => {
                    status = RunStatus::Aborted(e.to_string());
                    break;
                }
            }
        }
        done += committed;

        if let Some(g) = gen_best {
            if compare_records(&g, &best, FEAS_TOL) == Ordering::Less {
                best = g;
                sigma *= config.adapt_factor;
            } else {
                sigma /= divisor;
            }
            sigma = sigma.clamp(SIGMA_MIN, SIGMA_MAX);
        }
        if committed > 0 {
            log.push(IterationLog {
                iteration: log.len(),
                x: dataset.records[first_eval + committed - 1].x.clone(),
                acquisition: None,
                tau: None,
                step_size: Some(sigma),
                fit_time_s: 0.0,
                solve_time_s,
                eval_time_s,
                fallback: None,
                first_eval,
                n_evals: committed,
                n_experts: None,
                model: None,
            });
        }
        if matches!(status, RunStatus::Aborted(_)) {
            break;
        }
    }

    Ok(RunTrace {
        solver: "evol".into(),
        seed,
        problem: problem.name().to_string(),
        n_initial,
        dataset,
        log,
        config: serde_json::to_value(config)?,
        status,
    })
}

fn mutate<R: Rng + ?Sized>(x: &[f64], sigma: f64, coordinate: Option<usize>, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    match coordinate {
        Some(j) => {
            let z: f64 = StandardNormal.sample(rng);
            out[j] = (out[j] + sigma * z).clamp(0.0, 1.0);
        }
        None => {
            for v in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = (*v + sigma * z).clamp(0.0, 1.0);
            }
        }
    }
    out
}
