//! Bounded local minimization used for hyperparameter fitting and the
//! in-fill sub-problem.
//!
//! The solver is a projected quasi-Newton method: BFGS directions on the
//! variables that are not pinned at a bound, an Armijo backtracking line
//! search along the projected path, and a steepest-descent reset whenever
//! the quasi-Newton direction stops being a descent direction.

/// A function to minimize together with a way to obtain its gradient.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Gradient at `x`, where `fx` is the already computed value there.
    fn gradient(&mut self, x: &[f64], fx: f64) -> Vec<f64>;

    /// Cost of one gradient call in units of value calls.
    fn gradient_cost(&self, _dim: usize) -> usize {
        1
    }
}

/// Forward finite-difference gradients around a value closure.
pub struct FiniteDiff<'a, F: FnMut(&[f64]) -> f64> {
    pub f: F,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub step: f64,
}

impl<'a, F: FnMut(&[f64]) -> f64> FiniteDiff<'a, F> {
    pub fn new(f: F, lower: &'a [f64], upper: &'a [f64]) -> Self {
        Self {
            f,
            lower,
            upper,
            step: 1e-7,
        }
    }
}

impl<F: FnMut(&[f64]) -> f64> Objective for FiniteDiff<'_, F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&mut self, x: &[f64], fx: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = self.step * (self.upper[i] - self.lower[i]).max(1e-12);
                // step backwards when the forward point would leave the box
                let h = if x[i] + h > self.upper[i] { -h } else { h };
                xp[i] = x[i] + h;
                let fh = (self.f)(&xp);
                xp[i] = x[i];
                (fh - fx) / h
            })
            .collect()
    }

    fn gradient_cost(&self, dim: usize) -> usize {
        dim
    }
}

#[derive(Clone, Debug)]
pub struct LocalOptions {
    /// Budget in value-call units (gradients are charged by `gradient_cost`).
    pub max_evals: usize,
    pub gtol: f64,
    pub ftol: f64,
    pub xtol: f64,
    /// Largest first step, as a fraction of the box width.
    pub max_first_step: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            max_evals: 1000,
            gtol: 1e-8,
            ftol: 1e-12,
            xtol: 1e-10,
            max_first_step: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Minimizes `obj` over the box `[lower, upper]` starting from `x0`.
pub fn minimize_box<O: Objective>(obj: &mut O, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LocalOptions) -> LocalResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut evals = 0usize;
    let mut f = obj.value(&x);
    evals += 1;
    if !f.is_finite() || n == 0 {
        return LocalResult { x, f, evals };
    }
    let mut g = obj.gradient(&x, f);
    evals += obj.gradient_cost(n);
    let mut h = identity(n);
    let mut fresh = true;

    while evals < opts.max_evals {
        let width = |i: usize| (upper[i] - lower[i]).max(1e-300);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= lower[i] + 1e-14 * width(i);
                let at_hi = x[i] >= upper[i] - 1e-14 * width(i);
                !((at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0))
            })
            .collect();
        let pg = (0..n).filter(|&i| free[i]).map(|i| (g[i] * width(i)).abs()).fold(0.0, f64::max);
        if pg <= opts.gtol * (1.0 + f.abs()) {
            break;
        }

        let mut dir = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            dir[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                dir[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        if fresh {
            // bound the very first steepest-descent step relative to the box
            let ratio = (0..n).map(|i| dir[i].abs() / width(i)).fold(0.0, f64::max);
            if ratio > opts.max_first_step {
                let s = opts.max_first_step / ratio;
                dir.iter_mut().for_each(|d| *d *= s);
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            if evals >= opts.max_evals {
                break;
            }
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            project(&mut xn, lower, upper);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let fnew = obj.value(&xn);
            evals += 1;
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease && decrease < 0.0 {
                accepted = Some((xn, fnew));
                break;
            }
            if decrease >= 0.0 && fnew.is_finite() && fnew < f {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let step = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let fchange = f - fnew;
        if evals >= opts.max_evals {
            x = xn;
            f = fnew;
            break;
        }
        let gnew = obj.gradient(&xn, fnew);
        evals += obj.gradient_cost(n);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        let yy: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy && sy > 0.0 {
            if fresh {
                let scale = sy / (yy * yy);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = xn;
        f = fnew;
        g = gnew;
        if step <= opts.xtol || fchange <= opts.ftol * (1.0 + f.abs()) {
            break;
        }
    }
    LocalResult { x, f, evals }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Inverse-Hessian BFGS update `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained_interior() {
        let lo = [-2.0, -2.0];
        let hi = [2.0, 2.0];
        let mut obj = FiniteDiff::new(|x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), &lo, &hi);
        let r = minimize_box(&mut obj, &[-1.2, 1.0], &lo, &hi, &LocalOptions { max_evals: 5000, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?}", r);
    }

    #[test]
    fn active_bound_is_found() {
        let lo = [0.0, 0.0];
        let hi = [1.0, 1.0];
        let mut obj = FiniteDiff::new(|x: &[f64]| (x[0] + 0.5).powi(2) + (x[1] - 0.3).powi(2), &lo, &hi);
        let r = minimize_box(&mut obj, &[0.9, 0.9], &lo, &hi, &LocalOptions::default());
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn respects_budget() {
        let lo = [0.0; 5];
        let hi = [1.0; 5];
        let mut calls = 0usize;
        {
            let mut obj = FiniteDiff::new(
                |x: &[f64]| {
                    calls += 1;
                    x.iter().map(|v| (v - 0.7).powi(4)).sum()
                },
                &lo,
                &hi,
            );
            minimize_box(&mut obj, &[0.1; 5], &lo, &hi, &LocalOptions { max_evals: 40, ..Default::default() });
        }
        assert!(calls <= 40 + 5, "{calls}");
    }
}
