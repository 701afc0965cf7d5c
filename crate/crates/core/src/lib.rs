//! Constrained Bayesian optimization toolkit.
//!
//! The crate provides the SEGO family of surrogate-based optimizers
//! (Gaussian-process and KPLS surrogates, mixture of experts, WB2S
//! acquisition, mean and upper-trust-bound feasibility criteria), an
//! evolution-strategy baseline, and a benchmark harness that runs
//! multi-seed experiments and turns the resulting traces into
//! convergence and parallel-coordinates plots.
//!
//! All solver-side computations happen in normalized `[0, 1]^d`
//! coordinates; constraints are canonicalized so that a point is feasible
//! when every constraint value is nonnegative.

pub mod acquisition;
pub mod benchmarks;
pub mod doe;
pub mod error;
pub mod evol;
pub mod experiment;
pub mod optim;
pub mod problem;
pub mod reporting;
pub mod sego;
pub mod surrogate;
pub mod trace;

pub use acquisition::{AcquisitionKind, AcquisitionSpec, FeasibilityKind, FeasibilitySpec};
pub use doe::{Dataset, DoeRule};
pub use error::{Error, Result};
pub use evol::EvolConfig;
pub use experiment::{BudgetRule, ExperimentConfig};
pub use problem::{ConstraintSense, EvalClock, EvaluationRecord, OptimizationProblem};
pub use reporting::ConvergenceReport;
pub use sego::{InnerSolverConfig, SolverConfig, Variant};
pub use surrogate::{GaussianProcessModel, Kernel, MixtureOfExperts, PlsProjection, Recombination};
pub use trace::{IterationLog, RunStatus, RunTrace};

/// Default feasibility tolerance on canonical constraint values.
pub const FEAS_TOL: f64 = 1e-6;

pub(crate) fn seeded_rng(parts: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    // splitmix-style mixing so that nearby tuples give unrelated streams
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    rand_chacha::ChaCha8Rng::seed_from_u64(h)
}
