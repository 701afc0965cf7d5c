//! Mixture of local Gaussian-process experts gated by input-space Gaussians.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gp::{fit_gp, GaussianProcessModel, GpDump, GpOptions};
use crate::error::{Error, Result};

const EM_RESTARTS: usize = 5;
const EM_MAX_ITER: usize = 200;
const EM_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recombination {
    Hard,
    #[default]
    Smooth,
}

#[derive(Clone, Debug)]
struct Gate {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
    log_weight: f64,
}

impl Gate {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>, weight: f64) -> Option<Self> {
        let d = mean.len();
        let chol = Cholesky::new(cov)?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().take(d).map(|v| v.ln()).sum::<f64>();
        Some(Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet),
            log_weight: weight.max(1e-300).ln(),
        })
    }

    /// Gradient of the log density: `-S^-1 (x - mean)`.
    fn log_density_grad(&self, x: &[f64]) -> DVector<f64> {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        -self.chol.solve(&diff)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self.chol.l().solve_lower_triangular(&diff).unwrap_or(diff);
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Trained mixture. With one expert every prediction is delegated to it unchanged.
#[derive(Clone, Debug)]
pub struct MixtureOfExperts {
    experts: Vec<GaussianProcessModel>,
    gates: Vec<Gate>,
    recombination: Recombination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeDump {
    pub recombination: Recombination,
    pub gate_means: Vec<Vec<f64>>,
    pub gate_weights: Vec<f64>,
    pub experts: Vec<GpDump>,
}

struct Gmm {
    resp: Vec<Vec<f64>>,
    log_lik: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn weighted_moments(data: &[DVector<f64>], w: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let dim = data[0].len();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(dim);
    for (x, wi) in data.iter().zip(w) {
        mean += x * *wi;
    }
    mean /= total.max(1e-300);
    let mut cov = DMatrix::zeros(dim, dim);
    for (x, wi) in data.iter().zip(w) {
        let diff = x - &mean;
        cov += &diff * diff.transpose() * *wi;
    }
    cov /= total.max(1e-300);
    for i in 0..dim {
        cov[(i, i)] += RIDGE;
    }
    (mean, cov, total)
}

/// One EM run for `k` full-covariance components; `None` on numerical
/// breakdown or non-convergence within the iteration cap.
fn em<R: Rng + ?Sized>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Option<Gmm> {
    let n = data.len();
    let dim = data[0].len();
    let all = vec![1.0; n];
    let (_, global_cov, _) = weighted_moments(data, &all);
    let mut means: Vec<DVector<f64>> = sample(rng, n, k).iter().map(|i| data[i].clone()).collect();
    let mut covs = vec![global_cov.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![vec![0.0; k]; n];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        let gates: Vec<Gate> = (0..k)
            .map(|j| Gate::new(means[j].clone(), covs[j].clone(), weights[j]))
            .collect::<Option<_>>()?;
        let mut ll = 0.0;
        let mut buf = vec![0.0; k];
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            for (b, g) in buf.iter_mut().zip(&gates) {
                *b = g.log_weight + g.log_density(x.as_slice());
            }
            let lse = log_sum_exp(&buf);
            ll += lse;
            for (ri, b) in r.iter_mut().zip(&buf) {
                *ri = (b - lse).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        let converged = (ll - prev).abs() <= EM_TOL * (1.0 + ll.abs());
        prev = ll;
        if converged {
            return Some(Gmm {
                resp,
                log_lik: ll,
            });
        }
        for j in 0..k {
            let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            let (m, c, total) = weighted_moments(data, &w);
            if total < 1e-8 {
                // empty component: restart it on a random point
                means[j] = data[rng.random_range(0..n)].clone();
                covs[j] = global_cov.clone();
                weights[j] = 1.0 / n as f64;
                continue;
            }
            means[j] = m;
            covs[j] = c;
            weights[j] = total / n as f64;
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
    }
    log::debug!("EM did not converge for k={k} in {EM_MAX_ITER} iterations (dim {dim})");
    None
}

/// Bayesian information criterion of a full-covariance mixture.
pub(crate) fn bic(log_lik: f64, k: usize, dim: usize, n: usize) -> f64 {
    let params = (k - 1) + k * dim + k * dim * (dim + 1) / 2;
    -2.0 * log_lik + params as f64 * (n as f64).ln()
}

/// Chooses the cluster count by BIC over `1..=max_k` and returns hard labels.
fn cluster<R: Rng + ?Sized>(x: &[Vec<f64>], ys: &[f64], max_k: usize, min_size: usize, rng: &mut R) -> Vec<usize> {
    let n = x.len();
    let data: Vec<DVector<f64>> = x
        .iter()
        .zip(ys)
        .map(|(r, y)| DVector::from_iterator(r.len() + 1, r.iter().copied().chain(std::iter::once(*y))))
        .collect();
    let dim = data[0].len();
    let mut best: Option<(f64, Gmm)> = None;
    let mut any_failed = false;
    for k in 1..=max_k {
        let mut best_k: Option<Gmm> = None;
        for _ in 0..EM_RESTARTS {
            if let Some(g) = em(&data, k, rng) {
                if best_k.as_ref().map(|b| g.log_lik > b.log_lik).unwrap_or(true) {
                    best_k = Some(g);
                }
            }
            if k == 1 {
                break;
            }
        }
        let Some(g) = best_k else {
            any_failed = true;
            continue;
        };
        // components without enough support for their covariance are degenerate
        if g.resp.iter().fold(vec![0.0; k], |mut acc, r| {
            acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            acc
        })
        .iter()
        .any(|&s| s < min_size as f64)
            && k > 1
        {
            continue;
        }
        let score = bic(g.log_lik, k, dim, n);
        if best.as_ref().map(|(b, _)| score < *b).unwrap_or(true) {
            best = Some((score, g));
        }
    }
    let Some((_, gmm)) = best else {
        if any_failed {
            log::warn!("mixture fit failed to converge; using a single expert");
        }
        return vec![0; n];
    };
    let mut labels: Vec<usize> = gmm
        .resp
        .iter()
        .map(|r| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0))
        .collect();
    merge_small(x, &mut labels, min_size);
    labels
}

/// Folds clusters below `min_size` into the cluster with the nearest input mean
/// and relabels to `0..K`.
fn merge_small(x: &[Vec<f64>], labels: &mut [usize], min_size: usize) {
    let d = x[0].len();
    loop {
        let k = labels.iter().max().map(|m| m + 1).unwrap_or(1);
        let mut sizes = vec![0usize; k];
        let mut means = vec![vec![0.0; d]; k];
        for (r, &l) in x.iter().zip(labels.iter()) {
            sizes[l] += 1;
            means[l].iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        for (m, &s) in means.iter_mut().zip(&sizes) {
            m.iter_mut().for_each(|v| *v /= s.max(1) as f64);
        }
        let live: Vec<usize> = (0..k).filter(|&j| sizes[j] > 0).collect();
        let small = live.iter().copied().filter(|&j| sizes[j] < min_size).min_by_key(|&j| (sizes[j], j));
        match small {
            Some(j) if live.len() > 1 => {
                let target = live
                    .iter()
                    .copied()
                    .filter(|&t| t != j)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a].iter().zip(&means[j]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = means[b].iter().zip(&means[j]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                labels.iter_mut().filter(|l| **l == j).for_each(|l| *l = target);
            }
            _ => {
                let mut remap = vec![usize::MAX; k];
                for (new, &old) in live.iter().enumerate() {
                    remap[old] = new;
                }
                labels.iter_mut().for_each(|l| *l = remap[*l]);
                return;
            }
        }
    }
}

/// Fits up to `max_experts` local GPs on clusters of the joint
/// (input, standardized output) space.
pub fn fit_moe<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[f64],
    max_experts: usize,
    recombination: Recombination,
    opts: &GpOptions,
    rng: &mut R,
) -> Result<MixtureOfExperts> {
    let n = x.len();
    if max_experts == 0 || n < 4 * max_experts {
        return Err(Error::Precondition(format!(
            "fit_moe needs n >= 4 * max_experts (n={n}, max_experts={max_experts})"
        )));
    }
    if max_experts == 1 {
        return Ok(MixtureOfExperts {
            experts: vec![fit_gp(x, y, opts, rng)?],
            gates: Vec::new(),
            recombination,
        });
    }
    let d = x[0].len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-300);
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
    let labels = cluster(x, &ys, max_experts, d + 2, rng);
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(1);
    if k == 1 {
        return Ok(MixtureOfExperts {
            experts: vec![fit_gp(x, y, opts, rng)?],
            gates: Vec::new(),
            recombination,
        });
    }
    let mut experts = Vec::with_capacity(k);
    let mut gates = Vec::with_capacity(k);
    for j in 0..k {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
        let xj: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yj: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        experts.push(fit_gp(&xj, &yj, opts, rng)?);
        let pts: Vec<DVector<f64>> = xj.iter().map(|r| DVector::from_column_slice(r)).collect();
        let (m, c, _) = weighted_moments(&pts, &vec![1.0; pts.len()]);
        gates.push(
            Gate::new(m, c, idx.len() as f64 / n as f64)
                .ok_or_else(|| Error::Fit(format!("gating covariance of cluster {j} is not positive definite")))?,
        );
    }
    Ok(MixtureOfExperts {
        experts,
        gates,
        recombination,
    })
}

/// Mean and standard deviation of a Gaussian mixture with the given weights.
pub fn mix_moments(parts: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
    let mu: f64 = parts.iter().zip(weights).map(|((m, _), w)| w * m).sum();
    let second: f64 = parts.iter().zip(weights).map(|((m, s), w)| w * (s * s + m * m)).sum();
    (mu, (second - mu * mu).max(0.0).sqrt())
}

impl MixtureOfExperts {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    /// Hyperparameters of the expert with the largest gate weight.
    pub fn dominant_theta(&self) -> &[f64] {
        let j = argmax(&self.gates.iter().map(|g| g.log_weight).collect::<Vec<_>>());
        self.experts[j.min(self.experts.len() - 1)].theta()
    }

    pub fn experts(&self) -> &[GaussianProcessModel] {
        &self.experts
    }

    pub fn recombination(&self) -> Recombination {
        self.recombination
    }

    /// Posterior responsibilities of the experts at `x`; nonnegative, summing to one.
    pub fn gating_weights(&self, x: &[f64]) -> Vec<f64> {
        if self.gates.is_empty() {
            return vec![1.0];
        }
        let logs: Vec<f64> = self.gates.iter().map(|g| g.log_weight + g.log_density(x)).collect();
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        if self.experts.len() == 1 {
            return self.experts[0].predict(x);
        }
        let w = self.gating_weights(x);
        match self.recombination {
            Recombination::Hard => {
                let j = argmax(&w);
                self.experts[j].predict(x)
            }
            Recombination::Smooth => {
                let parts: Vec<(f64, f64)> = self.experts.iter().map(|e| e.predict(x)).collect();
                mix_moments(&parts, &w)
            }
        }
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        if self.experts.len() == 1 {
            return self.experts[0].predict_mean(x);
        }
        let w = self.gating_weights(x);
        match self.recombination {
            Recombination::Hard => self.experts[argmax(&w)].predict_mean(x),
            Recombination::Smooth => self.experts.iter().zip(&w).map(|(e, wi)| wi * e.predict_mean(x)).sum(),
        }
    }

    fn weights_and_grads(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let w = self.gating_weights(x);
        let g: Vec<DVector<f64>> = self.gates.iter().map(|g| g.log_density_grad(x)).collect();
        let d = x.len();
        let gbar: Vec<f64> = (0..d).map(|i| g.iter().zip(&w).map(|(gk, wk)| wk * gk[i]).sum()).collect();
        let dw = g
            .iter()
            .zip(&w)
            .map(|(gk, wk)| (0..d).map(|i| wk * (gk[i] - gbar[i])).collect())
            .collect();
        (w, dw)
    }

    /// Mean and its gradient.
    pub fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if self.experts.len() == 1 {
            return self.experts[0].predict_mean_grad(x);
        }
        match self.recombination {
            Recombination::Hard => self.experts[argmax(&self.gating_weights(x))].predict_mean_grad(x),
            Recombination::Smooth => {
                let (w, dw) = self.weights_and_grads(x);
                let mut mu = 0.0;
                let mut grad = vec![0.0; x.len()];
                for ((e, wk), dwk) in self.experts.iter().zip(&w).zip(&dw) {
                    let (m, dm) = e.predict_mean_grad(x);
                    mu += wk * m;
                    for i in 0..x.len() {
                        grad[i] += dwk[i] * m + wk * dm[i];
                    }
                }
                (mu, grad)
            }
        }
    }

    /// Mean, standard deviation, and their gradients.
    pub fn predict_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        if self.experts.len() == 1 {
            return self.experts[0].predict_grad(x);
        }
        match self.recombination {
            Recombination::Hard => self.experts[argmax(&self.gating_weights(x))].predict_grad(x),
            Recombination::Smooth => {
                let d = x.len();
                let (w, dw) = self.weights_and_grads(x);
                let parts: Vec<_> = self.experts.iter().map(|e| e.predict_grad(x)).collect();
                let mut mu = 0.0;
                let mut second = 0.0;
                let mut dmu = vec![0.0; d];
                let mut dsecond = vec![0.0; d];
                for ((p, wk), dwk) in parts.iter().zip(&w).zip(&dw) {
                    let (m, s, dm, ds) = p;
                    mu += wk * m;
                    second += wk * (s * s + m * m);
                    for i in 0..d {
                        dmu[i] += dwk[i] * m + wk * dm[i];
                        dsecond[i] += dwk[i] * (s * s + m * m) + wk * 2.0 * (s * ds[i] + m * dm[i]);
                    }
                }
                let var = second - mu * mu;
                if var <= 0.0 {
                    return (mu, 0.0, dmu, vec![0.0; d]);
                }
                let sd = var.sqrt();
                let dsd = (0..d).map(|i| (dsecond[i] - 2.0 * mu * dmu[i]) / (2.0 * sd)).collect();
                (mu, sd, dmu, dsd)
            }
        }
    }

    pub fn dump(&self) -> MoeDump {
        MoeDump {
            recombination: self.recombination,
            gate_means: self.gates.iter().map(|g| g.mean.iter().copied().collect()).collect(),
            gate_weights: self.gates.iter().map(|g| g.log_weight.exp()).collect(),
            experts: self.experts.iter().map(|e| e.dump()).collect(),
        }
    }
}

fn argmax(w: &[f64]) -> usize {
    w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map(|(i, _)| i).unwrap_or(0)
}
