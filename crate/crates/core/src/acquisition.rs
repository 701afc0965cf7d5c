//! Acquisition functions over the objective surrogate and feasibility
//! criteria over the constraint surrogates. Every acquisition is a
//! quantity to minimize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::Surrogate;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Ei,
    Wb2,
    #[default]
    Wb2s,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    pub wb2s_beta: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Wb2s,
            wb2s_beta: 100.0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.wb2s_beta > 0.0) || !self.wb2s_beta.is_finite() {
            return Err(Error::Config(format!("wb2s_beta must be positive, got {}", self.wb2s_beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityKind {
    #[default]
    MeanFeasibility,
    Utb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    #[default]
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilitySpec {
    pub kind: FeasibilityKind,
    pub tau0: f64,
    pub decay: Decay,
    pub tau_end_fraction: f64,
    /// Iteration at which `tau` reaches `tau0 * tau_end_fraction`.
    pub horizon: usize,
}

impl Default for FeasibilitySpec {
    fn default() -> Self {
        Self {
            kind: FeasibilityKind::MeanFeasibility,
            tau0: 3.0,
            decay: Decay::Exponential,
            tau_end_fraction: 0.01,
            horizon: 0,
        }
    }
}

impl FeasibilitySpec {
    pub fn utb() -> Self {
        Self {
            kind: FeasibilityKind::Utb,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 >= 0.0) || !self.tau0.is_finite() {
            return Err(Error::Config(format!("tau0 must be nonnegative, got {}", self.tau0)));
        }
        if !(self.tau_end_fraction > 0.0 && self.tau_end_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tau_end_fraction must lie in (0, 1], got {}",
                self.tau_end_fraction
            )));
        }
        Ok(())
    }
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// `phi(u) + u Phi(u)`, the expected improvement of a unit-variance
/// posterior at standardized gap `u`. The lower tail uses a continued
/// fraction so the result keeps full relative precision.
fn ei_unit(u: f64) -> f64 {
    if u > -5.0 {
        return normal_pdf(u) + u * normal_cdf(u);
    }
    let t = -u;
    let mut c = 0.0;
    for k in (2..=80).rev() {
        c = k as f64 / (t + c);
    }
    let c = 1.0 / (t + c);
    normal_pdf(u) * c / (t + c)
}

/// Expected improvement below `f_min`; zero when `sigma` is zero.
pub fn expected_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    (sigma * ei_unit((f_min - mu) / sigma)).max(0.0)
}

/// Expected improvement and its partial derivatives in `mu` and `sigma`.
pub fn expected_improvement_partials(mu: f64, sigma: f64, f_min: f64) -> (f64, f64, f64) {
    if !(sigma > 0.0) {
        return (0.0, 0.0, 0.0);
    }
    let u = (f_min - mu) / sigma;
    let ei = sigma * ei_unit(u);
    if ei <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (ei, -normal_cdf(u), normal_pdf(u))
}

/// Acquisition value from a posterior `(mu, sigma)`; `scale` is the WB2S factor.
pub fn acquisition_from(spec: &AcquisitionSpec, mu: f64, sigma: f64, f_min: f64, scale: f64) -> f64 {
    let ei = expected_improvement(mu, sigma, f_min);
    match spec.kind {
        AcquisitionKind::Ei => -ei,
        AcquisitionKind::Wb2 => mu - ei,
        AcquisitionKind::Wb2s => mu - scale * ei,
    }
}

/// Acquisition value to minimize at `x`.
pub fn acquisition_value(spec: &AcquisitionSpec, model: &dyn Surrogate, x: &[f64], f_min: f64, scale: f64) -> f64 {
    let (mu, sigma) = model.predict(x);
    acquisition_from(spec, mu, sigma, f_min, scale)
}

/// Acquisition value and its gradient at `x`.
pub fn acquisition_grad(spec: &AcquisitionSpec, model: &dyn Surrogate, x: &[f64], f_min: f64, scale: f64) -> (f64, Vec<f64>) {
    let (mu, sigma, dmu, dsigma) = model.predict_grad(x);
    let (ei, de_mu, de_sigma) = expected_improvement_partials(mu, sigma, f_min);
    let (w_mu, w_ei) = match spec.kind {
        AcquisitionKind::Ei => (0.0, -1.0),
        AcquisitionKind::Wb2 => (1.0, -1.0),
        AcquisitionKind::Wb2s => (1.0, -scale),
    };
    let grad = dmu
        .iter()
        .zip(&dsigma)
        .map(|(dm, ds)| w_mu * dm + w_ei * (de_mu * dm + de_sigma * ds))
        .collect();
    (w_mu * mu + w_ei * ei, grad)
}

/// WB2S scale from the posterior mean and EI at the EI-maximizing candidate.
pub fn wb2s_scale_from(mu: f64, ei: f64, beta: f64) -> f64 {
    if ei > 1e-16 {
        beta * mu.abs() / ei
    } else {
        1.0
    }
}

pub fn compute_wb2s_scale(model: &dyn Surrogate, f_min: f64, candidate: &[f64], beta: f64) -> f64 {
    let (mu, sigma) = model.predict(candidate);
    wb2s_scale_from(mu, expected_improvement(mu, sigma, f_min), beta)
}

/// Trust parameter at iteration `l`: `tau0 * exp(-gamma * l)` with
/// `gamma = ln(1 / tau_end_fraction) / horizon`.
pub fn utb_tau(spec: &FeasibilitySpec, l: usize) -> f64 {
    if spec.horizon == 0 {
        return spec.tau0 * spec.tau_end_fraction;
    }
    if l == spec.horizon {
        return spec.tau0 * spec.tau_end_fraction;
    }
    let gamma = (1.0 / spec.tau_end_fraction).ln() / spec.horizon as f64;
    spec.tau0 * (-gamma * l as f64).exp()
}

/// Trust parameter in effect for the criterion: zero under mean feasibility.
pub fn active_tau(spec: &FeasibilitySpec, l: usize) -> f64 {
    match spec.kind {
        FeasibilityKind::MeanFeasibility => 0.0,
        FeasibilityKind::Utb => utb_tau(spec, l),
    }
}

/// Per-constraint margins; `x` is in the approximated feasible domain when all are nonnegative.
pub fn feasibility_margin<S: Surrogate + ?Sized>(spec: &FeasibilitySpec, models: &[&S], x: &[f64], l: usize) -> Vec<f64> {
    let tau = active_tau(spec, l);
    models
        .iter()
        .map(|m| {
            if tau == 0.0 {
                m.predict_mean(x)
            } else {
                let (mu, sigma) = m.predict(x);
                mu + tau * sigma
            }
        })
        .collect()
}
