//! Constrained optimization problems over box domains.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar function of a physical design vector.
pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintSense {
    /// `g(x) <= B`
    LessEqual,
    /// `g(x) >= B`
    GreaterEqual,
}

impl ConstraintSense {
    pub fn flipped(self) -> Self {
        match self {
            ConstraintSense::LessEqual => ConstraintSense::GreaterEqual,
            ConstraintSense::GreaterEqual => ConstraintSense::LessEqual,
        }
    }
}

#[derive(Clone)]
pub struct Constraint {
    pub name: String,
    pub eval: Evaluator,
    pub bound: f64,
    pub sense: ConstraintSense,
}

/// Optimum reported for a benchmark, in physical coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub point: Vec<f64>,
    pub value: f64,
}

/// How evaluation wall time is recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalClock {
    /// Measure the evaluator calls.
    #[default]
    Measured,
    /// Charge a fixed virtual cost per evaluation, which keeps histories
    /// byte-reproducible.
    Simulated { cost_s: f64 },
}

/// One evaluated design. `x` is in normalized coordinates and `c` holds the
/// canonical constraint values (feasible iff every entry is nonnegative).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub f: f64,
    pub c: Vec<f64>,
    pub eval_index: usize,
    pub wall_time_s: f64,
}

impl EvaluationRecord {
    pub fn is_feasible(&self, feas_tol: f64) -> bool {
        self.c.iter().all(|&ci| ci >= -feas_tol)
    }

    /// L1 sum of positive violations.
    pub fn violation(&self) -> f64 {
        self.c.iter().map(|&ci| (-ci).max(0.0)).sum()
    }
}

/// Objective plus inequality constraints over `[lower, upper]^d`.
#[derive(Clone)]
pub struct OptimizationProblem {
    name: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Evaluator,
    constraints: Vec<Constraint>,
    known_optimum: Option<KnownOptimum>,
}

impl fmt::Debug for OptimizationProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptimizationProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("n_constraints", &self.n_constraints())
            .finish()
    }
}

impl OptimizationProblem {
    pub fn new<F>(name: impl Into<String>, lower: Vec<f64>, upper: Vec<f64>, objective: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if lower.is_empty() {
            return Err(Error::Config("problem dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::Config(format!(
                "lower bound {} is not below upper bound {} for component {i}",
                lower[i], upper[i]
            )));
        }
        Ok(Self {
            name: name.into(),
            lower,
            upper,
            objective: Arc::new(objective),
            constraints: Vec::new(),
            known_optimum: None,
        })
    }

    pub fn with_constraint<F>(mut self, name: impl Into<String>, sense: ConstraintSense, bound: f64, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.constraints.push(Constraint {
            name: name.into(),
            eval: Arc::new(eval),
            bound,
            sense,
        });
        self
    }

    pub fn with_known_optimum(mut self, point: Vec<f64>, value: f64) -> Self {
        self.known_optimum = Some(KnownOptimum { point, value });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn known_optimum(&self) -> Option<&KnownOptimum> {
        self.known_optimum.as_ref()
    }

    /// Returns a copy with constraint `i` stated in the opposite sense.
    pub fn with_flipped_sense(&self, i: usize) -> Self {
        let mut p = self.clone();
        p.constraints[i].sense = p.constraints[i].sense.flipped();
        p
    }

    /// Maps a physical point into `[0, 1]^d`.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                let slack = BOUND_SLACK * (hi - lo).abs().max(1.0);
                if !(xi >= lo - slack && xi <= hi + slack) {
                    return Err(Error::Domain {
                        component: i,
                        value: xi,
                        lower: lo,
                        upper: hi,
                    });
                }
                Ok(((xi - lo) / (hi - lo)).clamp(0.0, 1.0))
            })
            .collect()
    }

    pub fn denormalize(&self, x_norm: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x_norm.len())?;
        check_unit_box(x_norm)?;
        Ok(self.denormalize_unchecked(x_norm))
    }

    fn denormalize_unchecked(&self, x_norm: &[f64]) -> Vec<f64> {
        x_norm
            .iter()
            .enumerate()
            .map(|(i, &u)| self.lower[i] + u * (self.upper[i] - self.lower[i]))
            .collect()
    }

    /// Turns raw constraint outputs into the canonical `c >= 0` form.
    pub fn canonicalize_constraints(&self, g_raw: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .zip(g_raw)
            .map(|(con, &g)| match con.sense {
                ConstraintSense::LessEqual => con.bound - g,
                ConstraintSense::GreaterEqual => g - con.bound,
            })
            .collect()
    }

    /// Raw objective and constraint outputs at a physical point.
    pub fn eval_physical(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let f = (self.objective)(x);
        let g = self.constraints.iter().map(|con| (con.eval)(x)).collect();
        (f, g)
    }

    /// Evaluates the objective and canonical constraints at a normalized point.
    pub fn evaluate(&self, x_norm: &[f64], eval_index: usize) -> Result<EvaluationRecord> {
        self.evaluate_with_clock(x_norm, eval_index, EvalClock::Measured)
    }

    pub fn evaluate_with_clock(&self, x_norm: &[f64], eval_index: usize, clock: EvalClock) -> Result<EvaluationRecord> {
        self.check_dim(x_norm.len())?;
        check_unit_box(x_norm)?;
        let xp = self.denormalize_unchecked(x_norm);
        let start = Instant::now();
        let (f, g) = self.eval_physical(&xp);
        let measured = start.elapsed().as_secs_f64();
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { x: x_norm.to_vec() });
        }
        let wall_time_s = match clock {
            EvalClock::Measured => measured,
            EvalClock::Simulated { cost_s } => cost_s,
        };
        Ok(EvaluationRecord {
            x: x_norm.to_vec(),
            f,
            c: self.canonicalize_constraints(&g),
            eval_index,
            wall_time_s,
        })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_unit_box(x: &[f64]) -> Result<()> {
    if let Some((i, &v)) = x
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= -BOUND_SLACK && v <= 1.0 + BOUND_SLACK))
    {
        return Err(Error::Domain {
            component: i,
            value: v,
            lower: 0.0,
            upper: 1.0,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad2() -> OptimizationProblem {
        OptimizationProblem::new("q", vec![0.0, 0.0], vec![2.0, 4.0], |x| x.iter().map(|v| v * v).sum()).unwrap()
    }

    #[test]
    fn normalize_affine_map() {
        let p = quad2();
        assert_eq!(p.normalize(&[1.0, 1.0]).unwrap(), vec![0.5, 0.25]);
        assert_eq!(p.normalize(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_out_of_bounds_component() {
        let p = quad2();
        match p.normalize(&[1.0, 4.5]) {
            Err(Error::Domain { component, .. }) => assert_eq!(component, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(OptimizationProblem::new("bad", vec![1.0], vec![1.0], |_| 0.0).is_err());
        assert!(OptimizationProblem::new("bad", vec![], vec![], |_| 0.0).is_err());
    }

    #[test]
    fn canonicalize_both_senses() {
        let le = OptimizationProblem::new("p", vec![0.0], vec![1.0], |_| 0.0)
            .unwrap()
            .with_constraint("g", ConstraintSense::LessEqual, 3.0, |_| 2.0);
        assert_eq!(le.canonicalize_constraints(&[2.0]), vec![1.0]);
        let ge = le.with_flipped_sense(0);
        assert_eq!(ge.canonicalize_constraints(&[2.0]), vec![-1.0]);
        let free = OptimizationProblem::new("p", vec![0.0], vec![1.0], |_| 0.0).unwrap();
        assert!(free.canonicalize_constraints(&[]).is_empty());
    }

    #[test]
    fn evaluate_substitutes_constraint() {
        let p = OptimizationProblem::new("p", vec![0.0], vec![1.0], |x| x[0])
            .unwrap()
            .with_constraint("x0", ConstraintSense::LessEqual, 0.5, |x| x[0]);
        let r = p.evaluate(&[0.7], 0).unwrap();
        assert!((r.c[0] + 0.2).abs() < 1e-15);
        assert!(!r.is_feasible(1e-6));
        assert!((r.violation() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn evaluate_non_finite_is_error() {
        let p = OptimizationProblem::new("p", vec![0.0], vec![1.0], |x| 1.0 / (x[0] - 0.5)).unwrap();
        let err = p.evaluate(&[0.5], 0).unwrap_err();
        assert!(matches!(err, Error::Evaluation { ref x } if x == &vec![0.5]));
    }

    #[test]
    fn simulated_clock_charges_fixed_cost() {
        let p = quad2();
        let r = p.evaluate_with_clock(&[0.1, 0.2], 3, EvalClock::Simulated { cost_s: 2.5 }).unwrap();
        assert_eq!(r.wall_time_s, 2.5);
        assert_eq!(r.eval_index, 3);
    }
}
