use serde::{Deserialize, Serialize};

use super::pls::PlsProjection;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Stationary correlation families. Both are products of one-dimensional
/// kernels in the scaled distance `t = sqrt(theta) * |x - x'|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    SquaredExponential,
    #[default]
    Matern52,
}

/// Correlation function with fixed hyperparameters, ready for fast
/// evaluation. Under KPLS the `h` hyperparameters act on the projected
/// coordinates `w_l . x`, expanded back onto the input dimensions.
#[derive(Clone, Debug)]
pub(crate) struct Correlation {
    kernel: Kernel,
    dim: usize,
    /// SE: per-input-dimension coefficient `sum_l theta_l w_il^2`.
    se_coef: Vec<f64>,
    /// Matern: `sqrt(theta_l) |w_il|`, laid out `[l * dim + i]`.
    m_coef: Vec<f64>,
    /// Matern: nonzero entries of `m_coef` as `(i, coefficient)`.
    m_terms: Vec<(usize, f64)>,
    /// Matern: `sum_l m_coef[l * dim + i]`, the exponent rate per input.
    m_rate: Vec<f64>,
}

impl Correlation {
    pub fn new(kernel: Kernel, theta: &[f64], dim: usize, proj: Option<&PlsProjection>) -> Self {
        let n_hyper = theta.len();
        let weight = |l: usize, i: usize| -> f64 {
            match proj {
                Some(p) => p.weight(i, l),
                None => {
                    if l == i {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        };
        let mut se_coef = vec![0.0; dim];
        let mut m_coef = vec![0.0; n_hyper * dim];
        for l in 0..n_hyper {
            for i in 0..dim {
                let w = weight(l, i);
                se_coef[i] += theta[l] * w * w;
                m_coef[l * dim + i] = theta[l].sqrt() * w.abs();
            }
        }
        let mut m_terms = Vec::new();
        let mut m_rate = vec![0.0; dim];
        for l in 0..n_hyper {
            for i in 0..dim {
                let c = m_coef[l * dim + i];
                if c != 0.0 {
                    m_terms.push((i, c));
                    m_rate[i] += c;
                }
            }
        }
        Self {
            kernel,
            dim,
            se_coef,
            m_coef,
            m_terms,
            m_rate,
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kernel {
            Kernel::SquaredExponential => {
                let mut s = 0.0;
                for i in 0..self.dim {
                    let d = a[i] - b[i];
                    s += self.se_coef[i] * d * d;
                }
                (-s).exp()
            }
            Kernel::Matern52 => {
                let mut lin = 0.0;
                for i in 0..self.dim {
                    lin += self.m_rate[i] * (a[i] - b[i]).abs();
                }
                // independent partial products keep the multiply chain short
                let mut p = [1.0f64; 4];
                let chunks = self.m_terms.chunks_exact(4);
                let rest = chunks.remainder();
                for c in chunks {
                    for k in 0..4 {
                        let (i, m) = c[k];
                        let t = m * (a[i] - b[i]).abs();
                        p[k] *= 1.0 + SQRT5 * t + 5.0 / 3.0 * t * t;
                    }
                }
                for (k, &(i, m)) in rest.iter().enumerate() {
                    let t = m * (a[i] - b[i]).abs();
                    p[k] *= 1.0 + SQRT5 * t + 5.0 / 3.0 * t * t;
                }
                (p[0] * p[1]) * (p[2] * p[3]) * (-SQRT5 * lin).exp()
            }
        }
    }

    /// Correlation and its gradient with respect to `a`.
    pub fn eval_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.eval(a, b);
        match self.kernel {
            Kernel::SquaredExponential => {
                for i in 0..self.dim {
                    grad[i] = -2.0 * self.se_coef[i] * (a[i] - b[i]) * r;
                }
            }
            Kernel::Matern52 => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &(i, m) in &self.m_terms {
                    let d = a[i] - b[i];
                    let t = m * d.abs();
                    let p = 1.0 + SQRT5 * t + 5.0 / 3.0 * t * t;
                    grad[i] -= 5.0 / 3.0 * m * m * d * (1.0 + SQRT5 * t) / p;
                }
                grad.iter_mut().for_each(|g| *g *= r);
            }
        }
        r
    }

    /// Derivatives of `ln r(a, b)` with respect to `ln theta_l`.
    pub fn log_grad(&self, a: &[f64], b: &[f64], theta: &[f64], proj: Option<&PlsProjection>, out: &mut [f64]) {
        match self.kernel {
            Kernel::SquaredExponential => {
                for (l, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    match proj {
                        Some(p) => {
                            for i in 0..self.dim {
                                let w = p.weight(i, l);
                                let d = a[i] - b[i];
                                s += w * w * d * d;
                            }
                        }
                        None => {
                            let d = a[l] - b[l];
                            s = d * d;
                        }
                    }
                    *o = -theta[l] * s;
                }
            }
            Kernel::Matern52 => {
                for (l, o) in out.iter_mut().enumerate() {
                    let row = &self.m_coef[l * self.dim..(l + 1) * self.dim];
                    let mut s = 0.0;
                    for i in 0..self.dim {
                        if row[i] == 0.0 {
                            continue;
                        }
                        let t = row[i] * (a[i] - b[i]).abs();
                        let p = 1.0 + SQRT5 * t + 5.0 / 3.0 * t * t;
                        s -= 5.0 / 6.0 * t * t * (1.0 + SQRT5 * t) / p;
                    }
                    *o = s;
                }
            }
        }
    }
}
