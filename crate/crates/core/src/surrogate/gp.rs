//! Ordinary kriging with anisotropic kernels and maximum-likelihood
//! hyperparameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{Correlation, Kernel};
use super::pls::{pls_fit, PlsProjection};
use crate::error::{Error, Result};
use crate::optim::{minimize_box, LocalOptions, Objective};

pub const THETA_MIN: f64 = 1e-2;
pub const THETA_MAX: f64 = 1e2;
pub const NUGGET_MIN: f64 = 1e-10;
pub const NUGGET_MAX: f64 = 1e-4;
const REFINE_STEPS: usize = 30;

/// Fitting options for [`fit_gp`].
#[derive(Clone, Debug)]
pub struct GpOptions {
    pub kernel: Kernel,
    /// Number of PLS components; `None` keeps one length-scale per input.
    pub kpls_components: Option<usize>,
    /// Multi-start count for a cold fit; `None` applies 10 for `d <= 10`, 20 above.
    pub n_restarts: Option<usize>,
    /// Previous optimum; switches to one short local search from the better
    /// of it and the unit vector.
    pub warm_start: Option<Vec<f64>>,
    /// Fixed hyperparameters; skips the likelihood search.
    pub theta: Option<Vec<f64>>,
    /// Fixed constant trend in output units.
    pub trend: Option<f64>,
    /// Fixed process variance in output units.
    pub process_variance: Option<f64>,
    pub nugget: f64,
    /// Standardize outputs to zero mean and unit variance before fitting.
    pub standardize: bool,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            kpls_components: None,
            n_restarts: None,
            warm_start: None,
            theta: None,
            trend: None,
            process_variance: None,
            nugget: NUGGET_MIN,
            standardize: true,
        }
    }
}

pub fn default_restarts(d: usize) -> usize {
    if d <= 10 {
        10
    } else {
        20
    }
}

/// A trained Gaussian process. Immutable; safe to share across threads.
#[derive(Clone, Debug)]
pub struct GaussianProcessModel {
    kernel: Kernel,
    theta: Vec<f64>,
    proj: Option<PlsProjection>,
    corr: Correlation,
    dim: usize,
    n: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    /// Trend and process variance in standardized units.
    beta: f64,
    sigma2: f64,
    nugget: f64,
    /// Row-major packed lower Cholesky factor of the correlation matrix.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    constant: bool,
    log_likelihood: f64,
}

/// Hyperparameters and state summary written by the model dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub kernel: Kernel,
    pub theta: Vec<f64>,
    pub trend: f64,
    pub process_variance: f64,
    pub nugget: f64,
    pub log_likelihood: f64,
    pub n_train: usize,
    pub constant: bool,
    pub pls_weights: Option<Vec<Vec<f64>>>,
}

struct Training<'a> {
    x: &'a [f64],
    y: &'a [f64],
    n: usize,
    dim: usize,
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    corr: DMatrix<f64>,
    nugget: f64,
    beta: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    nll: f64,
}

fn factor(
    t: &Training<'_>,
    corr: &Correlation,
    nugget0: f64,
    fixed_beta: Option<f64>,
    fixed_sigma2: Option<f64>,
) -> Option<Factored> {
    let n = t.n;
    let mut c = DMatrix::<f64>::identity(n, n);
    for a in 0..n {
        let xa = &t.x[a * t.dim..(a + 1) * t.dim];
        for b in 0..a {
            let v = corr.eval(xa, &t.x[b * t.dim..(b + 1) * t.dim]);
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    let mut nugget = nugget0.max(NUGGET_MIN);
    let chol = loop {
        let mut r = c.clone();
        for i in 0..n {
            r[(i, i)] += nugget;
        }
        if let Some(ch) = Cholesky::new(r) {
            break ch;
        }
        nugget *= 10.0;
        if nugget > NUGGET_MAX * (1.0 + 1e-9) {
            return None;
        }
    };
    let y = DVector::from_column_slice(t.y);
    let ones = DVector::from_element(n, 1.0);
    let beta = match fixed_beta {
        Some(b) => b,
        None => {
            let ri1 = chol.solve(&ones);
            let riy = chol.solve(&y);
            ones.dot(&riy) / ones.dot(&ri1)
        }
    };
    let resid = &y - &ones * beta;
    let alpha = chol.solve(&resid);
    let sigma2 = fixed_sigma2.unwrap_or_else(|| (resid.dot(&alpha) / n as f64).max(1e-300));
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>();
    let nll = 0.5 * n as f64 * sigma2.ln() + 0.5 * logdet;
    Some(Factored {
        chol,
        corr: c,
        nugget,
        beta,
        sigma2,
        alpha,
        nll,
    })
}

/// Iterative refinement of the kriging weights towards the nugget-free
/// system, preconditioned by the regularized factor. Shrinks the
/// interpolation residual `nugget * alpha` at the training points.
fn refine_weights(fac: &mut Factored, ys: &[f64]) {
    let n = ys.len();
    let target = DVector::from_iterator(n, ys.iter().map(|v| v - fac.beta));
    let mut best = f64::INFINITY;
    for _ in 0..REFINE_STEPS {
        let res = &target - &fac.corr * &fac.alpha;
        let size = res.amax();
        if !(size < best) || size < 1e-14 {
            break;
        }
        best = size;
        let step = fac.chol.solve(&res);
        let trial = &fac.alpha + step;
        let trial_size = (&target - &fac.corr * &trial).amax();
        if !(trial_size < size) {
            break;
        }
        fac.alpha = trial;
    }
}

/// Concentrated negative log-likelihood over `ln theta`.
struct Likelihood<'a> {
    t: Training<'a>,
    kernel: Kernel,
    proj: Option<&'a PlsProjection>,
    nugget: f64,
    cache: Option<(Vec<f64>, Factored)>,
}

impl Likelihood<'_> {
    fn theta(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.exp()).collect()
    }
}

impl Objective for Likelihood<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        let theta = Self::theta(x);
        let corr = Correlation::new(self.kernel, &theta, self.t.dim, self.proj);
        match factor(&self.t, &corr, self.nugget, None, None) {
            Some(fac) => {
                let v = fac.nll;
                self.cache = Some((x.to_vec(), fac));
                v
            }
            None => f64::INFINITY,
        }
    }

    fn gradient(&mut self, x: &[f64], _fx: f64) -> Vec<f64> {
        if self.cache.as_ref().map(|(cx, _)| cx.as_slice() != x).unwrap_or(true) {
            self.value(x);
        }
        let theta = Self::theta(x);
        let Some((_, fac)) = self.cache.as_ref() else {
            return vec![0.0; x.len()];
        };
        let n = self.t.n;
        let dim = self.t.dim;
        let rinv = fac.chol.inverse();
        let corr = Correlation::new(self.kernel, &theta, dim, self.proj);
        let mut grad = vec![0.0; x.len()];
        let mut dl = vec![0.0; x.len()];
        for a in 0..n {
            let xa = &self.t.x[a * dim..(a + 1) * dim];
            for b in 0..a {
                let xb = &self.t.x[b * dim..(b + 1) * dim];
                let m = fac.alpha[a] * fac.alpha[b] / fac.sigma2 - rinv[(a, b)];
                let w = m * fac.corr[(a, b)];
                if w == 0.0 {
                    continue;
                }
                corr.log_grad(xa, xb, &theta, self.proj, &mut dl);
                for (g, d) in grad.iter_mut().zip(&dl) {
                    *g -= w * d;
                }
            }
        }
        grad
    }
}

fn validate(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Precondition(format!("fit_gp needs at least 2 points, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Precondition("training inputs must share a nonzero dimension".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("training data must be finite".into()));
    }
    for a in 0..n {
        for b in 0..a {
            if crate::doe::inf_dist(&x[a], &x[b]) < crate::doe::DUPLICATE_TOL {
                return Err(Error::Precondition(format!("training rows {b} and {a} coincide")));
            }
        }
    }
    Ok(d)
}

/// Trains a kriging model by multi-start maximization of the concentrated
/// likelihood over `theta in [1e-2, 1e2]^F` (`F = d`, or the number of
/// PLS components under KPLS).
pub fn fit_gp<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[f64], opts: &GpOptions, rng: &mut R) -> Result<GaussianProcessModel> {
    let d = validate(x, y)?;
    let n = x.len();
    // canonical row order makes the fit independent of the input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let x: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let (x, y) = (x.as_slice(), y.as_slice());
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let flat: Vec<f64> = x.iter().flatten().copied().collect();

    if std <= 1e-12 * mean.abs().max(1e-300) || std == 0.0 {
        log::debug!("fit_gp: constant outputs, returning a flat model");
        let n_hyper = opts.kpls_components.map(|h| h.min(d)).unwrap_or(d);
        let theta = vec![1.0; n_hyper];
        let corr = Correlation::new(opts.kernel, &theta, d, None);
        return Ok(GaussianProcessModel {
            kernel: opts.kernel,
            theta,
            proj: None,
            corr,
            dim: d,
            n,
            x: flat,
            y: y.to_vec(),
            y_mean: mean,
            y_std: 1.0,
            beta: 0.0,
            sigma2: 0.0,
            nugget: opts.nugget,
            chol: Vec::new(),
            alpha: vec![0.0; n],
            constant: true,
            log_likelihood: f64::INFINITY,
        });
    }

    let (y_mean, y_std) = if opts.standardize { (mean, std) } else { (0.0, 1.0) };
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let proj = match opts.kpls_components {
        Some(h) => Some(pls_fit(x, &ys, h.min(d).min(n - 1).max(1))?),
        None => None,
    };
    let n_hyper = proj.as_ref().map(|p| p.components()).unwrap_or(d);
    let training = Training {
        x: &flat,
        y: &ys,
        n,
        dim: d,
    };

    let theta = match &opts.theta {
        Some(t) => {
            if t.len() != n_hyper {
                return Err(Error::Dimension {
                    expected: n_hyper,
                    got: t.len(),
                });
            }
            t.clone()
        }
        None => {
            let lo = vec![THETA_MIN.ln(); n_hyper];
            let hi = vec![THETA_MAX.ln(); n_hyper];
            let mut lik = Likelihood {
                t: Training {
                    x: &flat,
                    y: &ys,
                    n,
                    dim: d,
                },
                kernel: opts.kernel,
                proj: proj.as_ref(),
                nugget: opts.nugget,
                cache: None,
            };
            let mut starts: Vec<Vec<f64>> = Vec::new();
            let local = match &opts.warm_start {
                Some(w) if w.len() == n_hyper => {
                    // one short search from the better of the previous optimum and the unit vector
                    let warm: Vec<f64> = w.iter().map(|v| v.clamp(THETA_MIN, THETA_MAX).ln()).collect();
                    let unit = vec![0.0; n_hyper];
                    let fw = lik.value(&warm);
                    let fu = lik.value(&unit);
                    starts.push(if fu < fw { unit } else { warm });
                    LocalOptions {
                        max_evals: 10 + n_hyper,
                        gtol: 1e-5,
                        ftol: 1e-8,
                        xtol: 1e-4,
                        max_first_step: 0.1,
                    }
                }
                _ => {
                    starts.push(vec![0.0; n_hyper]);
                    let k = opts.n_restarts.unwrap_or_else(|| default_restarts(d));
                    for _ in 1..k {
                        starts.push((0..n_hyper).map(|_| rng.random_range(lo[0]..hi[0])).collect());
                    }
                    LocalOptions {
                        max_evals: 40 + 4 * n_hyper,
                        gtol: 1e-6,
                        ftol: 1e-9,
                        xtol: 1e-5,
                        max_first_step: 0.25,
                    }
                }
            };
            let mut best: Option<(f64, Vec<f64>)> = None;
            for s in &starts {
                let r = minimize_box(&mut lik, s, &lo, &hi, &local);
                if r.f.is_finite() && best.as_ref().map(|(bf, _)| r.f < *bf).unwrap_or(true) {
                    best = Some((r.f, r.x));
                }
            }
            match best {
                Some((_, lx)) => lx.iter().map(|v| v.exp().clamp(THETA_MIN, THETA_MAX)).collect(),
                None => return Err(Error::Fit("covariance factorization failed at every start".into())),
            }
        }
    };

    let corr = Correlation::new(opts.kernel, &theta, d, proj.as_ref());
    let fixed_beta = opts.trend.map(|t| (t - y_mean) / y_std);
    let fixed_sigma2 = opts.process_variance.map(|v| v / (y_std * y_std));
    let mut fac = factor(&training, &corr, opts.nugget, fixed_beta, fixed_sigma2)
        .ok_or_else(|| Error::Fit(format!("covariance factorization failed up to nugget {NUGGET_MAX}")))?;
    refine_weights(&mut fac, &ys);
    let l = fac.chol.l();
    let mut chol = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            chol.push(l[(i, j)]);
        }
    }
    Ok(GaussianProcessModel {
        kernel: opts.kernel,
        theta,
        proj,
        corr,
        dim: d,
        n,
        x: flat,
        y: y.to_vec(),
        y_mean,
        y_std,
        beta: fac.beta,
        sigma2: fac.sigma2,
        nugget: fac.nugget,
        chol,
        alpha: fac.alpha.iter().copied().collect(),
        constant: false,
        log_likelihood: -fac.nll,
    })
}

/// Concentrated log-likelihood of standardized data at fixed `theta`.
pub fn log_likelihood_at(x: &[Vec<f64>], y: &[f64], opts: &GpOptions, theta: &[f64]) -> Result<f64> {
    let d = validate(x, y)?;
    let n = x.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let (m, s) = if opts.standardize && std > 0.0 { (mean, std) } else { (0.0, 1.0) };
    let ys: Vec<f64> = y.iter().map(|v| (v - m) / s).collect();
    let proj = match opts.kpls_components {
        Some(h) => Some(pls_fit(x, &ys, h.min(d).min(n - 1).max(1))?),
        None => None,
    };
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let t = Training {
        x: &flat,
        y: &ys,
        n,
        dim: d,
    };
    let corr = Correlation::new(opts.kernel, theta, d, proj.as_ref());
    factor(&t, &corr, opts.nugget, None, None)
        .map(|f| -f.nll)
        .ok_or_else(|| Error::Fit("factorization failed".into()))
}

impl GaussianProcessModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn projection(&self) -> Option<&PlsProjection> {
        self.proj.as_ref()
    }

    /// Constant trend in output units.
    pub fn trend(&self) -> f64 {
        self.y_mean + self.y_std * self.beta
    }

    /// Process variance in output units.
    pub fn process_variance(&self) -> f64 {
        self.sigma2 * self.y_std * self.y_std
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// True when the training outputs had no variance.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Output scale used for standardization.
    pub fn output_scale(&self) -> f64 {
        self.y_std
    }

    pub fn training_inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks(self.dim)
    }

    pub fn training_outputs(&self) -> &[f64] {
        &self.y
    }

    fn correlations(&self, x: &[f64]) -> Vec<f64> {
        self.x.chunks_exact(self.dim).map(|xi| self.corr.eval(x, xi)).collect()
    }

    /// Posterior mean only.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        if self.constant {
            return self.y_mean;
        }
        let s: f64 = self
            .x
            .chunks_exact(self.dim)
            .zip(&self.alpha)
            .map(|(xi, a)| self.corr.eval(x, xi) * a)
            .sum();
        self.y_mean + self.y_std * (self.beta + s)
    }

    /// Posterior mean and standard deviation.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        if self.constant {
            return (self.y_mean, 0.0);
        }
        let r = self.correlations(x);
        let mu = self.beta + r.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        // forward substitution L v = r on the packed factor
        let mut v = r;
        let mut q = 0.0;
        let mut off = 0;
        for i in 0..self.n {
            let row = &self.chol[off..off + i + 1];
            let mut s = v[i];
            for j in 0..i {
                s -= row[j] * v[j];
            }
            let vi = s / row[i];
            v[i] = vi;
            q += vi * vi;
            off += i + 1;
        }
        let s2 = (self.sigma2 * (1.0 - q)).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * s2.sqrt())
    }

    /// Posterior mean and its gradient.
    pub fn predict_mean_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim];
        if self.constant {
            return (self.y_mean, grad);
        }
        let mut dr = vec![0.0; self.dim];
        let mut s = 0.0;
        for (xi, a) in self.x.chunks_exact(self.dim).zip(&self.alpha) {
            s += self.corr.eval_grad(x, xi, &mut dr) * a;
            grad.iter_mut().zip(&dr).for_each(|(g, d)| *g += a * d);
        }
        grad.iter_mut().for_each(|g| *g *= self.y_std);
        (self.y_mean + self.y_std * (self.beta + s), grad)
    }

    /// Posterior mean, standard deviation, and their gradients.
    pub fn predict_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        if self.constant {
            return (self.y_mean, 0.0, vec![0.0; d], vec![0.0; d]);
        }
        let n = self.n;
        let mut r = vec![0.0; n];
        let mut dr = vec![0.0; n * d];
        for (i, xi) in self.x.chunks_exact(d).enumerate() {
            r[i] = self.corr.eval_grad(x, xi, &mut dr[i * d..(i + 1) * d]);
        }
        let mu = self.beta + r.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = r.clone();
        let mut off = 0;
        for i in 0..n {
            let row = &self.chol[off..off + i + 1];
            let mut s = v[i];
            for j in 0..i {
                s -= row[j] * v[j];
            }
            v[i] = s / row[i];
            off += i + 1;
        }
        let q: f64 = v.iter().map(|a| a * a).sum();
        // u = R^-1 r by back substitution on the packed factor
        let mut u = v;
        for i in (0..n).rev() {
            let diag = self.chol[i * (i + 1) / 2 + i];
            let ui = u[i] / diag;
            u[i] = ui;
            let row_start = i * (i + 1) / 2;
            for j in 0..i {
                u[j] -= self.chol[row_start + j] * ui;
            }
        }
        let s2 = self.sigma2 * (1.0 - q);
        let mut dmu = vec![0.0; d];
        let mut ds2 = vec![0.0; d];
        for i in 0..n {
            let g = &dr[i * d..(i + 1) * d];
            for k in 0..d {
                dmu[k] += self.alpha[i] * g[k];
                ds2[k] -= 2.0 * self.sigma2 * u[i] * g[k];
            }
        }
        let sd = if s2 > 0.0 { s2.sqrt() } else { 0.0 };
        let dsd: Vec<f64> = ds2.iter().map(|g| if sd > 0.0 { self.y_std * g / (2.0 * sd) } else { 0.0 }).collect();
        dmu.iter_mut().for_each(|g| *g *= self.y_std);
        (self.y_mean + self.y_std * mu, self.y_std * sd, dmu, dsd)
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            kernel: self.kernel,
            theta: self.theta.clone(),
            trend: self.trend(),
            process_variance: self.process_variance(),
            nugget: self.nugget,
            log_likelihood: self.log_likelihood,
            n_train: self.n,
            constant: self.constant,
            pls_weights: self
                .proj
                .as_ref()
                .map(|p| (0..p.components()).map(|l| p.column(l).to_vec()).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn random_data(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random::<f64>()).collect()).collect();
        let y = x.iter().map(|p| f(p)).collect();
        (x, y)
    }

    /// Prediction by explicitly building and solving the full covariance system.
    fn dense_oracle(m: &GaussianProcessModel, x: &[f64]) -> f64 {
        let xs: Vec<Vec<f64>> = m.training_inputs().map(|r| r.to_vec()).collect();
        let n = xs.len();
        let k = |a: &[f64], b: &[f64]| -> f64 {
            let mut p = 1.0;
            let mut s = 0.0;
            for i in 0..a.len() {
                let t = m.theta[i].sqrt() * (a[i] - b[i]).abs();
                p *= 1.0 + 5f64.sqrt() * t + 5.0 / 3.0 * t * t;
                s += t;
            }
            p * (-5f64.sqrt() * s).exp()
        };
        let mut big = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                big[(a, b)] = k(&xs[a], &xs[b]);
            }
        }
        let resid = DVector::from_iterator(n, m.y.iter().map(|v| v - m.trend()));
        let w = big.lu().solve(&resid).unwrap();
        let r = DVector::from_iterator(n, xs.iter().map(|xi| k(x, xi)));
        m.trend() + r.dot(&w)
    }

    #[test]
    fn constant_outputs_give_flat_model() {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let m = fit_gp(&x, &[2.5; 3], &GpOptions::default(), &mut rng()).unwrap();
        assert!(m.is_constant());
        assert_eq!(m.predict(&[0.3]), (2.5, 0.0));
        assert_eq!(m.predict_mean(&[0.77]), 2.5);
    }

    #[test]
    fn interpolates_training_point_fixed_theta() {
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let opts = GpOptions {
            kernel: Kernel::SquaredExponential,
            theta: Some(vec![1.0]),
            nugget: 1e-10,
            ..Default::default()
        };
        let m = fit_gp(&x, &[0.0, 0.25, 1.0], &opts, &mut rng()).unwrap();
        assert!((m.predict(&[0.5]).0 - 0.25).abs() < 1e-5);
    }

    #[test]
    fn two_point_kriging_system() {
        // frozen from an exact symbolic solve of the 2x2 system
        const EXACT: f64 = 0.569_348_993_508_116_0;
        let x = vec![vec![0.0], vec![1.0]];
        let opts = GpOptions {
            kernel: Kernel::SquaredExponential,
            theta: Some(vec![1.0]),
            trend: Some(0.0),
            process_variance: Some(1.0),
            standardize: false,
            ..Default::default()
        };
        let m = fit_gp(&x, &[0.0, 1.0], &opts, &mut rng()).unwrap();
        // Cramer's rule on [[1, e^-1], [e^-1, 1]] w = [0, 1]
        let c = (-1.0f64).exp();
        let r = (-0.25f64).exp();
        let det = 1.0 - c * c;
        let w = [(0.0 - c) / det, 1.0 / det];
        let cramer = r * w[0] + r * w[1];
        let (mu, s) = m.predict(&[0.5]);
        assert!((mu - EXACT).abs() < 1e-8, "{mu}");
        assert!((mu - cramer).abs() < 1e-8);
        assert!((s * s - 0.113_181_116_029_926_09).abs() < 1e-8);
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let (x, y) = random_data(10, 2, 3, |p| (3.0 * p[0]).sin() + p[1]);
        let opts = GpOptions {
            theta: Some(vec![1.0, 1.0]),
            ..Default::default()
        };
        let m = fit_gp(&x, &y, &opts, &mut rng()).unwrap();
        let (mu, s) = m.predict(&[60.0, -60.0]);
        assert!((mu - m.trend()).abs() <= 0.01 * m.trend().abs().max(1e-12) + 1e-12);
        assert!((s * s / m.process_variance() - 1.0).abs() < 0.01);
    }

    #[test]
    fn matches_dense_covariance_oracle() {
        for seed in 0..5 {
            let (x, y) = random_data(8, 2, seed, |p| (5.0 * p[0]).cos() * p[1] + p[0] * p[0]);
            let m = fit_gp(&x, &y, &GpOptions::default(), &mut rng()).unwrap();
            for i in 0..=20 {
                for j in 0..=20 {
                    let p = [i as f64 / 20.0, j as f64 / 20.0];
                    let diff = (m.predict(&p).0 - dense_oracle(&m, &p)).abs();
                    assert!(diff < 1e-8, "seed {seed} at {p:?}: {diff}");
                }
            }
        }
    }

    #[test]
    fn interpolation_and_variance_at_training_points() {
        for seed in 0..10 {
            let d = 1 + (seed as usize % 5);
            let (x, y) = random_data(12 + seed as usize, d, seed, |p| p.iter().map(|v| (4.0 * v).sin()).sum());
            let m = fit_gp(&x, &y, &GpOptions::default(), &mut rng()).unwrap();
            let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
            for (xi, yi) in x.iter().zip(&y) {
                let (mu, s) = m.predict(xi);
                assert!((mu - yi).abs() <= 1e-6 * range, "seed {seed}: {} vs {}", mu, yi);
                assert!(s >= 0.0);
                assert!(s * s <= m.nugget() * m.process_variance() * 10.0 + 1e-12 * m.process_variance());
            }
        }
    }

    #[test]
    fn likelihood_not_worse_than_unit_start() {
        for seed in 0..5 {
            let (x, y) = random_data(15, 3, seed, |p| p[0] * 4.0 + (6.0 * p[1]).sin() + 0.1 * p[2]);
            let opts = GpOptions::default();
            let m = fit_gp(&x, &y, &opts, &mut rng()).unwrap();
            let at_one = log_likelihood_at(&x, &y, &opts, &[1.0; 3]).unwrap();
            assert!(m.log_likelihood() >= at_one - 1e-10);
        }
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let (x, y) = random_data(12, 3, 7, |p| p[0] + (3.0 * p[1]).sin() * p[2]);
        for kernel in [Kernel::SquaredExponential, Kernel::Matern52] {
            let flat: Vec<f64> = x.iter().flatten().copied().collect();
            let mean = y.iter().sum::<f64>() / 12.0;
            let ys: Vec<f64> = y.iter().map(|v| v - mean).collect();
            let mut lik = Likelihood {
                t: Training {
                    x: &flat,
                    y: &ys,
                    n: 12,
                    dim: 3,
                },
                kernel,
                proj: None,
                nugget: 1e-8,
                cache: None,
            };
            let p = [0.3, -0.4, 1.1];
            let f0 = lik.value(&p);
            let g = lik.gradient(&p, f0);
            for l in 0..3 {
                let h = 1e-5;
                let mut pp = p;
                pp[l] += h;
                let mut pm = p;
                pm[l] -= h;
                let fd = (lik.value(&pp) - lik.value(&pm)) / (2.0 * h);
                assert!((fd - g[l]).abs() < 1e-4 * (1.0 + fd.abs()), "{kernel:?} {l}: {fd} vs {}", g[l]);
            }
        }
    }

    #[test]
    fn permutation_invariance() {
        let (x, y) = random_data(14, 2, 21, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        let m1 = fit_gp(&x, &y, &GpOptions::default(), &mut rng()).unwrap();
        let mut idx: Vec<usize> = (0..14).collect();
        idx.reverse();
        idx.swap(2, 9);
        let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let m2 = fit_gp(&xp, &yp, &GpOptions::default(), &mut rng()).unwrap();
        let fixed = GpOptions {
            theta: Some(m1.theta().to_vec()),
            ..Default::default()
        };
        let m3 = fit_gp(&xp, &yp, &fixed, &mut rng()).unwrap();
        for i in 0..50 {
            let p = [i as f64 / 49.0, 1.0 - i as f64 / 49.0];
            assert!((m1.predict(&p).0 - m2.predict(&p).0).abs() < 1e-8);
            assert!((m1.predict(&p).0 - m3.predict(&p).0).abs() < 1e-8);
        }
    }

    #[test]
    fn kpls_with_identity_weights_matches_full_model() {
        let (x, y) = random_data(10, 3, 5, |p| p[0] - p[1] * p[2]);
        let theta = vec![0.7, 2.0, 5.0];
        for kernel in [Kernel::SquaredExponential, Kernel::Matern52] {
            let full = fit_gp(
                &x,
                &y,
                &GpOptions {
                    kernel,
                    theta: Some(theta.clone()),
                    ..Default::default()
                },
                &mut rng(),
            )
            .unwrap();
            let eye = PlsProjection::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
            let corr = Correlation::new(kernel, &theta, 3, Some(&eye));
            let mut kpls = full.clone();
            kpls.corr = corr;
            kpls.proj = Some(eye);
            for i in 0..20 {
                let p = [i as f64 / 19.0, 0.3, 1.0 - i as f64 / 19.0];
                assert!((full.predict(&p).0 - kpls.predict(&p).0).abs() < 1e-8);
                assert!((full.predict(&p).1 - kpls.predict(&p).1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kpls_fit_uses_requested_components() {
        let (x, y) = random_data(30, 15, 2, |p| p.iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum());
        let m = fit_gp(
            &x,
            &y,
            &GpOptions {
                kpls_components: Some(3),
                ..Default::default()
            },
            &mut rng(),
        )
        .unwrap();
        assert_eq!(m.theta().len(), 3);
        assert_eq!(m.projection().unwrap().components(), 3);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict(xi).0 - yi).abs() < 1e-4);
        }
    }

    #[test]
    fn prediction_gradients_match_finite_differences() {
        let (x, y) = random_data(15, 3, 13, |p| (4.0 * p[0]).sin() + p[1] * p[2]);
        for kernel in [Kernel::SquaredExponential, Kernel::Matern52] {
            let m = fit_gp(&x, &y, &GpOptions { kernel, ..Default::default() }, &mut rng()).unwrap();
            for p in [[0.31, 0.52, 0.77], [0.9, 0.1, 0.45]] {
                let (mu, sd, dmu, dsd) = m.predict_grad(&p);
                assert_eq!((mu, sd), m.predict(&p));
                let (mu2, dmu2) = m.predict_mean_grad(&p);
                assert!((mu - mu2).abs() < 1e-12);
                for k in 0..3 {
                    let h = 1e-6;
                    let mut pp = p;
                    pp[k] += h;
                    let mut pm = p;
                    pm[k] -= h;
                    let (a, sa) = m.predict(&pp);
                    let (b, sb) = m.predict(&pm);
                    let fd_mu = (a - b) / (2.0 * h);
                    let fd_sd = (sa - sb) / (2.0 * h);
                    assert!((fd_mu - dmu[k]).abs() < 1e-5 * (1.0 + fd_mu.abs()), "{kernel:?} mu {k}");
                    assert!((fd_mu - dmu2[k]).abs() < 1e-5 * (1.0 + fd_mu.abs()));
                    assert!((fd_sd - dsd[k]).abs() < 1e-5 * (1.0 + fd_sd.abs()), "{kernel:?} sd {k}: {fd_sd} vs {}", dsd[k]);
                }
            }
        }
    }

    #[test]
    fn duplicate_rows_rejected() {
        let x = vec![vec![0.2, 0.3], vec![0.2, 0.3]];
        assert!(matches!(
            fit_gp(&x, &[1.0, 2.0], &GpOptions::default(), &mut rng()),
            Err(Error::Precondition(_))
        ));
    }
}
