//! Analytic constrained benchmarks, addressable by name.
//!
//! The suite mirrors the problem shapes of an aircraft design study
//! (12 design variables with 8 constraints, 19 design variables with
//! 5 constraints) with cheap closed-form functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::problem::{ConstraintSense, OptimizationProblem};

/// Names accepted by [`benchmark`].
pub const BENCHMARK_NAMES: &[&str] = &["toy-quad", "branin-c", "g07", "cmdo12", "pmdo19"];

pub fn benchmark_suite() -> Vec<OptimizationProblem> {
    BENCHMARK_NAMES
        .iter()
        .map(|n| benchmark(n).expect("registered benchmark"))
        .collect()
}

pub fn benchmark(name: &str) -> Result<OptimizationProblem> {
    match name {
        "toy-quad" => Ok(toy_quad()),
        "branin-c" => Ok(branin_c()),
        "g07" => Ok(g07(0)),
        "cmdo12" => Ok(g07(2)),
        "pmdo19" => Ok(pmdo19()),
        _ => Err(Error::Config(format!(
            "unknown problem '{name}'; valid names: {}",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

/// Unconstrained `sum x_i^2` on `[-1, 1]^2`.
pub fn toy_quad() -> OptimizationProblem {
    OptimizationProblem::new("toy-quad", vec![-1.0; 2], vec![1.0; 2], |x| x.iter().map(|v| v * v).sum())
        .expect("valid bounds")
        .with_known_optimum(vec![0.0, 0.0], 0.0)
}

fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Branin on `[-5, 10] x [0, 15]` subject to `u1 * u2 >= 0.2`, with `u`
/// the unit-scaled coordinates.
pub fn branin_c() -> OptimizationProblem {
    // optimum lies on the constraint boundary; located by a 1-D bounded
    // search along u2 = 0.2 / u1
    let u_star = [0.969_492_530_318_008_3, 0.206_293_492_467_030_1];
    OptimizationProblem::new("branin-c", vec![-5.0, 0.0], vec![10.0, 15.0], |x| branin(x[0], x[1]))
        .expect("valid bounds")
        .with_constraint("product", ConstraintSense::GreaterEqual, 0.2, |x| {
            ((x[0] + 5.0) / 15.0) * (x[1] / 15.0)
        })
        .with_known_optimum(vec![-5.0 + 15.0 * u_star[0], 15.0 * u_star[1]], 0.732_967_447_367_642)
}

const G07_OPT: [f64; 10] = [
    2.171_996_341_426_92,
    2.363_683_041_603_4,
    8.773_925_739_131_57,
    5.095_984_437_451_73,
    0.990_654_756_560_493,
    1.430_573_928_534_63,
    1.321_644_153_643_06,
    9.828_725_765_244_95,
    8.280_091_588_735_6,
    8.375_926_647_734_7,
];
const G07_VALUE: f64 = 24.306_209_068_179_9;

/// The G07 problem (10 variables, 8 inequality constraints), optionally
/// padded with `extra` inactive variables on `[0, 1]`.
pub fn g07(extra: usize) -> OptimizationProblem {
    let d = 10 + extra;
    let mut lower = vec![-10.0; 10];
    let mut upper = vec![10.0; 10];
    lower.extend(std::iter::repeat(0.0).take(extra));
    upper.extend(std::iter::repeat(1.0).take(extra));
    let name = if extra == 0 { "g07".to_string() } else { format!("cmdo{d}") };
    let le = ConstraintSense::LessEqual;
    let mut opt = G07_OPT.to_vec();
    opt.extend(std::iter::repeat(0.5).take(extra));
    OptimizationProblem::new(name, lower, upper, |x| {
        let (x1, x2, x3, x4, x5, x6, x7, x8, x9, x10) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8], x[9]);
        x1 * x1 + x2 * x2 + x1 * x2 - 14.0 * x1 - 16.0 * x2
            + (x3 - 10.0).powi(2)
            + 4.0 * (x4 - 5.0).powi(2)
            + (x5 - 3.0).powi(2)
            + 2.0 * (x6 - 1.0).powi(2)
            + 5.0 * x7 * x7
            + 7.0 * (x8 - 11.0).powi(2)
            + 2.0 * (x9 - 10.0).powi(2)
            + (x10 - 7.0).powi(2)
            + 45.0
    })
    .expect("valid bounds")
    .with_constraint("g1", le, 0.0, |x| -105.0 + 4.0 * x[0] + 5.0 * x[1] - 3.0 * x[6] + 9.0 * x[7])
    .with_constraint("g2", le, 0.0, |x| 10.0 * x[0] - 8.0 * x[1] - 17.0 * x[6] + 2.0 * x[7])
    .with_constraint("g3", le, 0.0, |x| -8.0 * x[0] + 2.0 * x[1] + 5.0 * x[8] - 2.0 * x[9] - 12.0)
    .with_constraint("g4", le, 0.0, |x| {
        3.0 * (x[0] - 2.0).powi(2) + 4.0 * (x[1] - 3.0).powi(2) + 2.0 * x[2] * x[2] - 7.0 * x[3] - 120.0
    })
    .with_constraint("g5", le, 0.0, |x| {
        5.0 * x[0] * x[0] + 8.0 * x[1] + (x[2] - 6.0).powi(2) - 2.0 * x[3] - 40.0
    })
    .with_constraint("g6", le, 0.0, |x| {
        x[0] * x[0] + 2.0 * (x[1] - 2.0).powi(2) - 2.0 * x[0] * x[1] + 14.0 * x[4] - 6.0 * x[5]
    })
    .with_constraint("g7", le, 0.0, |x| {
        0.5 * (x[0] - 8.0).powi(2) + 2.0 * (x[1] - 4.0).powi(2) + 3.0 * x[4] * x[4] - x[5] - 30.0
    })
    .with_constraint("g8", le, 0.0, |x| -3.0 * x[0] + 6.0 * x[1] + 12.0 * (x[8] - 8.0).powi(2) - 7.0 * x[9])
    .with_known_optimum(opt, G07_VALUE)
}

const PMDO_DIM: usize = 19;
const PMDO_SHIFT: f64 = 1.5;

fn pmdo_weights() -> [f64; PMDO_DIM] {
    std::array::from_fn(|i| 1.0 + 4.0 * i as f64 / (PMDO_DIM - 1) as f64)
}

fn pmdo_targets() -> [f64; PMDO_DIM] {
    std::array::from_fn(|i| 0.3 + 0.4 * ((i as f64 * 0.618_033_988_749_895) % 1.0))
}

/// 19-variable, 5-constraint problem on `[0, 1]^19`: a weighted quadratic
/// whose unconstrained minimizer violates a linear budget constraint. The
/// remaining four constraints are inactive at the optimum, so the optimum
/// is the closed-form projection onto the budget hyperplane.
pub fn pmdo19() -> OptimizationProblem {
    let w = pmdo_weights();
    let t = pmdo_targets();
    let t_sum: f64 = t.iter().sum();
    let budget = t_sum - PMDO_SHIFT;
    let inv_w_sum: f64 = w.iter().map(|wi| 1.0 / wi).sum();
    let half_lambda = PMDO_SHIFT / inv_w_sum;
    let opt: Vec<f64> = (0..PMDO_DIM).map(|i| t[i] - half_lambda / w[i]).collect();
    let value = 1.0 + PMDO_SHIFT * PMDO_SHIFT / inv_w_sum;
    OptimizationProblem::new("pmdo19", vec![0.0; PMDO_DIM], vec![1.0; PMDO_DIM], move |x| {
        1.0 + x.iter().zip(w.iter().zip(t.iter())).map(|(xi, (wi, ti))| wi * (xi - ti).powi(2)).sum::<f64>()
    })
    .expect("valid bounds")
    .with_constraint("budget", ConstraintSense::LessEqual, budget, |x| x.iter().sum())
    .with_constraint("disk", ConstraintSense::LessEqual, 1.2, |x| x[0] * x[0] + x[1] * x[1])
    .with_constraint("coupling", ConstraintSense::GreaterEqual, 0.15, |x| x[2] + x[3] * x[4])
    .with_constraint("waviness", ConstraintSense::GreaterEqual, 0.5, |x| {
        x.iter().map(|v| (PI * v).sin()).sum::<f64>() / x.len() as f64
    })
    .with_constraint("tip", ConstraintSense::LessEqual, 0.6, |x| x[18] - x[17])
    .with_known_optimum(opt, value)
}

/// Maps a normalized design of one problem onto another: shared leading
/// coordinates are copied, new coordinates default to the box center.
pub fn map_design(x: &[f64], target_dim: usize) -> Vec<f64> {
    (0..target_dim).map(|i| x.get(i).copied().unwrap_or(0.5)).collect()
}
