//! Gaussian-process surrogates: plain kriging, KPLS, and mixtures of experts.

pub mod gp;
mod kernel;
pub mod moe;
pub mod pls;

pub use gp::{fit_gp, log_likelihood_at, GaussianProcessModel, GpDump, GpOptions};
pub use kernel::Kernel;
pub use moe::{fit_moe, MixtureOfExperts, MoeDump, Recombination};
pub use pls::{pls_fit, PlsProjection};

/// Anything that yields a posterior mean and standard deviation.
pub trait Surrogate: Send + Sync {
    fn predict(&self, x: &[f64]) -> (f64, f64);

    fn predict_mean(&self, x: &[f64]) -> f64 {
        self.predict(x).0
    }

    fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn predict_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>);
}

impl Surrogate for GaussianProcessModel {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        GaussianProcessModel::predict(self, x)
    }

    fn predict_mean(&self, x: &[f64]) -> f64 {
        GaussianProcessModel::predict_mean(self, x)
    }

    fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        GaussianProcessModel::predict_mean_grad(self, x)
    }

    fn predict_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        GaussianProcessModel::predict_grad(self, x)
    }
}

impl Surrogate for MixtureOfExperts {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        MixtureOfExperts::predict(self, x)
    }

    fn predict_mean(&self, x: &[f64]) -> f64 {
        MixtureOfExperts::predict_mean(self, x)
    }

    fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        MixtureOfExperts::predict_mean_grad(self, x)
    }

    fn predict_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        MixtureOfExperts::predict_grad(self, x)
    }
}
