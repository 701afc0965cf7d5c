//! PLS1 projection used to reduce the number of kriging hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm PLS weight vectors, one column per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsProjection {
    dim: usize,
    components: usize,
    /// Column-major `dim x components`.
    weights: Vec<f64>,
}

impl PlsProjection {
    /// Builds a projection from explicit columns; each is normalized.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || columns.iter().any(|c| c.len() != dim) {
            return Err(Error::Precondition("projection columns must share a nonzero length".into()));
        }
        let mut weights = Vec::with_capacity(dim * columns.len());
        for c in columns {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Precondition("projection column has zero norm".into()));
            }
            weights.extend(c.iter().map(|v| v / norm));
        }
        Ok(Self {
            dim,
            components: columns.len(),
            weights,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn weight(&self, input: usize, component: usize) -> f64 {
        self.weights[component * self.dim + input]
    }

    pub fn column(&self, component: usize) -> &[f64] {
        &self.weights[component * self.dim..(component + 1) * self.dim]
    }
}

/// Fits `h` PLS1 weight vectors by NIPALS with deflation of `X` and `y`.
///
/// `x` holds `n` rows of length `d`. Inputs and outputs are centered
/// internally; columns without variance receive zero weight.
pub fn pls_fit(x: &[Vec<f64>], y: &[f64], h: usize) -> Result<PlsProjection> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Precondition("pls_fit needs matching non-empty X and y".into()));
    }
    let d = x[0].len();
    if n < 2 || h == 0 || h > d.min(n - 1) {
        return Err(Error::Precondition(format!(
            "pls_fit needs 1 <= h <= min(d, n - 1); got h={h}, d={d}, n={n}"
        )));
    }
    let mut xm: Vec<Vec<f64>> = x.to_vec();
    for j in 0..d {
        let mean = xm.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        xm.iter_mut().for_each(|r| r[j] -= mean);
        if xm.iter().all(|r| r[j].abs() < 1e-300) {
            log::warn!("pls_fit: input column {j} has zero variance and gets zero weight");
        }
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut ym: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let scale = ym.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let x_scale = xm.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(h);
    for _ in 0..h {
        let mut w: Vec<f64> = (0..d).map(|j| xm.iter().zip(&ym).map(|(r, yi)| r[j] * yi).sum()).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale * x_scale * n as f64 {
            // y is exhausted: continue along the dominant residual input direction
            w = dominant_direction(&xm, &columns, d);
        } else {
            w.iter_mut().for_each(|v| *v /= norm);
        }
        let t: Vec<f64> = xm.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let tt: f64 = t.iter().map(|v| v * v).sum();
        if tt > 0.0 {
            let p: Vec<f64> = (0..d).map(|j| xm.iter().zip(&t).map(|(r, ti)| r[j] * ti).sum::<f64>() / tt).collect();
            let c = ym.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / tt;
            for (r, ti) in xm.iter_mut().zip(&t) {
                for j in 0..d {
                    r[j] -= ti * p[j];
                }
            }
            ym.iter_mut().zip(&t).for_each(|(yi, ti)| *yi -= c * ti);
        }
        columns.push(w);
    }
    PlsProjection::from_columns(&columns)
}

fn dominant_direction(xm: &[Vec<f64>], previous: &[Vec<f64>], d: usize) -> Vec<f64> {
    let orthogonalize = |v: &mut Vec<f64>| {
        for p in previous {
            let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
        }
    };
    // power iteration on the residual X^T X
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.1 * j as f64).collect();
    orthogonalize(&mut v);
    for _ in 0..200 {
        let xv: Vec<f64> = xm.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let mut nv: Vec<f64> = (0..d).map(|j| xm.iter().zip(&xv).map(|(r, s)| r[j] * s).sum()).collect();
        orthogonalize(&mut nv);
        let norm = nv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        v = nv.into_iter().map(|a| a / norm).collect();
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 1e-8 {
        return v.into_iter().map(|a| a / norm).collect();
    }
    // residual X is empty: complete the basis with a canonical direction
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        orthogonalize(&mut e);
        let norm = e.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return e.into_iter().map(|a| a / norm).collect();
        }
    }
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    e
}
