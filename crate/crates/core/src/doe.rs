//! Designs of experiments and the evaluated dataset they seed.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{EvalClock, EvaluationRecord, OptimizationProblem};
use crate::FEAS_TOL;

/// Two normalized points closer than this in the infinity norm are the same design.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Ordered, append-only evaluation history of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<EvaluationRecord>,
    pub problem_name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(problem_name: impl Into<String>, seed: u64) -> Self {
        Self {
            records: Vec::new(),
            problem_name: problem_name.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_index(&self) -> usize {
        self.records.len()
    }

    /// Appends a record; its `eval_index` must continue the sequence.
    pub fn push(&mut self, record: EvaluationRecord) {
        assert_eq!(record.eval_index, self.records.len(), "eval_index must be contiguous");
        self.records.push(record);
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.records.iter().map(|r| r.x.as_slice())
    }

    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        self.points().any(|p| inf_dist(p, x) < tol)
    }

    pub fn best_feasible(&self) -> Option<&EvaluationRecord> {
        self.records
            .iter()
            .filter(|r| r.is_feasible(FEAS_TOL))
            .fold(None, |best: Option<&EvaluationRecord>, r| match best {
                Some(b) if b.f <= r.f => Some(b),
                _ => Some(r),
            })
    }
}

pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Latin hypercube sample of `n` points in `[0, 1]^d` with uniform jitter
/// inside each stratum.
pub fn lhs_sample(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    lhs_sample_with(n, d, seed, false)
}

/// Latin hypercube sample; `centered` places every point at its stratum center.
pub fn lhs_sample_with(n: usize, d: usize, seed: u64, centered: bool) -> Vec<Vec<f64>> {
    assert!(n >= 1 && d >= 1, "lhs_sample needs n >= 1 and d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let offset = if centered { 0.5 } else { rng.random::<f64>() };
            // keep the point strictly inside [k/n, (k+1)/n)
            let v = (stratum as f64 + offset) / n as f64;
            points[i][j] = v.min(((stratum + 1) as f64 / n as f64).next_down());
        }
    }
    points
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoeRule {
    DPlusOne,
    Fixed(usize),
}

pub fn doe_size(d: usize, rule: DoeRule) -> Result<usize> {
    match rule {
        DoeRule::DPlusOne => Ok(d + 1),
        DoeRule::Fixed(n) if n >= 1 => Ok(n),
        DoeRule::Fixed(n) => Err(Error::Config(format!("fixed DoE size must be >= 1, got {n}"))),
    }
}

/// Evaluates a set of normalized points into a fresh dataset.
pub fn evaluate_points(
    problem: &OptimizationProblem,
    points: &[Vec<f64>],
    seed: u64,
    clock: EvalClock,
) -> Result<Dataset> {
    let mut ds = Dataset::new(problem.name(), seed);
    for p in points {
        let rec = problem.evaluate_with_clock(p, ds.next_index(), clock)?;
        ds.push(rec);
    }
    Ok(ds)
}

/// Appends an evaluation at `x_star` unless the design is already present.
/// Returns whether a record was added.
pub fn inject_warm_start(
    dataset: &mut Dataset,
    x_star: &[f64],
    problem: &OptimizationProblem,
    clock: EvalClock,
) -> Result<bool> {
    crate::problem::check_unit_box(x_star)?;
    if dataset.contains_point(x_star, DUPLICATE_TOL) {
        return Ok(false);
    }
    let rec = problem.evaluate_with_clock(x_star, dataset.next_index(), clock)?;
    dataset.push(rec);
    Ok(true)
}

/// Lexicographic quality order: feasible before infeasible, then lower
/// objective (feasible) or lower L1 violation (infeasible).
pub fn compare_records(a: &EvaluationRecord, b: &EvaluationRecord, feas_tol: f64) -> Ordering {
    match (a.is_feasible(feas_tol), b.is_feasible(feas_tol)) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (true, true) => a.f.total_cmp(&b.f),
        (false, false) => a.violation().total_cmp(&b.violation()),
    }
}

/// Best record of a history; ties go to the lowest `eval_index`.
pub fn incumbent_of(records: &[EvaluationRecord], feas_tol: f64) -> Option<&EvaluationRecord> {
    records.iter().fold(None, |best, r| match best {
        Some(b) if compare_records(r, b, feas_tol) != Ordering::Less => Some(b),
        _ => Some(r),
    })
}

pub fn incumbent(dataset: &Dataset) -> Result<&EvaluationRecord> {
    incumbent_of(&dataset.records, FEAS_TOL).ok_or_else(|| Error::Precondition("incumbent of an empty dataset".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: usize, f: f64, c: Vec<f64>) -> EvaluationRecord {
        EvaluationRecord {
            x: vec![i as f64 / 10.0],
            f,
            c,
            eval_index: i,
            wall_time_s: 0.0,
        }
    }

    fn stratified(points: &[Vec<f64>]) -> bool {
        let n = points.len();
        let d = points[0].len();
        (0..d).all(|j| {
            let mut seen = vec![false; n];
            points.iter().all(|p| {
                let k = (p[j] * n as f64).floor() as usize;
                k < n && !std::mem::replace(&mut seen[k], true) && p[j] >= 0.0
            })
        })
    }

    #[test]
    fn lhs_cmdo_sizing() {
        let pts = lhs_sample(13, 12, 7);
        assert_eq!(pts.len(), 13);
        assert!(pts.iter().all(|p| p.len() == 12));
        assert!(stratified(&pts));
    }

    #[test]
    fn lhs_single_point_and_determinism() {
        let p = lhs_sample(1, 4, 0);
        assert_eq!(p.len(), 1);
        assert!(p[0].iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(lhs_sample(9, 3, 42), lhs_sample(9, 3, 42));
        assert_ne!(lhs_sample(9, 3, 42), lhs_sample(9, 3, 43));
    }

    #[test]
    fn lhs_centered_hits_stratum_centers() {
        let pts = lhs_sample_with(4, 2, 1, true);
        for p in &pts {
            for v in p {
                assert!(((v * 4.0) - (v * 4.0).floor() - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lhs_stratification_exhaustive() {
        for n in 1..=64 {
            for d in 1..=32 {
                for seed in 0..5 {
                    assert!(stratified(&lhs_sample(n, d, seed)), "n={n} d={d} seed={seed}");
                }
            }
        }
    }

    #[test]
    fn doe_size_rules() {
        assert_eq!(doe_size(12, DoeRule::DPlusOne).unwrap(), 13);
        assert_eq!(doe_size(19, DoeRule::Fixed(20)).unwrap(), 20);
        assert_eq!(doe_size(1, DoeRule::DPlusOne).unwrap(), 2);
        assert!(matches!(doe_size(3, DoeRule::Fixed(0)), Err(Error::Config(_))));
    }

    #[test]
    fn warm_start_appends_and_dedups() {
        let p = crate::benchmarks::pmdo19();
        let pts = lhs_sample(20, 19, 3);
        let mut ds = evaluate_points(&p, &pts, 3, EvalClock::Measured).unwrap();
        let x = vec![0.5; 19];
        assert!(inject_warm_start(&mut ds, &x, &p, EvalClock::Measured).unwrap());
        assert_eq!(ds.len(), 21);
        assert!(!inject_warm_start(&mut ds, &x, &p, EvalClock::Measured).unwrap());
        assert_eq!(ds.len(), 21);
        let existing = pts[4].clone();
        assert!(!inject_warm_start(&mut ds, &existing, &p, EvalClock::Measured).unwrap());

        let mut empty = Dataset::new("pmdo19", 0);
        inject_warm_start(&mut empty, &x, &p, EvalClock::Measured).unwrap();
        assert_eq!(empty.len(), 1);
        assert_eq!(empty.records[0].eval_index, 0);
    }

    #[test]
    fn incumbent_prefers_feasible() {
        let mut ds = Dataset::new("t", 0);
        ds.push(rec(0, 5.0, vec![1.0]));
        ds.push(rec(1, 3.0, vec![0.5]));
        ds.push(rec(2, 1.0, vec![-1.0]));
        assert_eq!(incumbent(&ds).unwrap().f, 3.0);
    }

    #[test]
    fn incumbent_minimal_violation_when_all_infeasible() {
        let mut ds = Dataset::new("t", 0);
        ds.push(rec(0, 1.0, vec![-2.0]));
        ds.push(rec(1, 1.0, vec![-0.25, -0.25]));
        ds.push(rec(2, 0.0, vec![-0.7]));
        assert_eq!(incumbent(&ds).unwrap().eval_index, 1);
    }

    #[test]
    fn incumbent_single_and_empty() {
        let mut ds = Dataset::new("t", 0);
        assert!(matches!(incumbent(&ds), Err(Error::Precondition(_))));
        ds.push(rec(0, 9.0, vec![-3.0]));
        assert_eq!(incumbent(&ds).unwrap().eval_index, 0);
    }

    #[test]
    fn incumbent_ties_lowest_index() {
        let mut ds = Dataset::new("t", 0);
        ds.push(rec(0, 2.0, vec![]));
        ds.push(rec(1, 2.0, vec![]));
        assert_eq!(incumbent(&ds).unwrap().eval_index, 0);
    }

    proptest! {
        #[test]
        fn incumbent_never_infeasible_when_feasible_exists(
            vals in proptest::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 1..30)
        ) {
            let mut ds = Dataset::new("t", 0);
            for (i, (f, c)) in vals.iter().enumerate() {
                ds.push(rec(i, *f, vec![*c]));
            }
            let inc = incumbent(&ds).unwrap();
            if ds.records.iter().any(|r| r.is_feasible(FEAS_TOL)) {
                prop_assert!(inc.is_feasible(FEAS_TOL));
                let fmin = ds.records.iter().filter(|r| r.is_feasible(FEAS_TOL)).map(|r| r.f).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(inc.f, fmin);
            }
        }
    }
}
