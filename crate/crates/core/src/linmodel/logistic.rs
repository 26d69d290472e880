use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 500;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainMeta,
}

/// Mean log-loss plus `(lambda / 2) * |w|^2`; the bias is not penalized.
///
/// Parameters are packed as `[w_0, ..., w_{d-1}, b]`.
pub struct LogisticObjective<'a, R> {
    x: &'a [R],
    y: &'a [bool],
    lambda: f64,
    dim: usize,
}

impl<'a, R: AsRef<[f64]>> LogisticObjective<'a, R> {
    pub fn new(x: &'a [R], y: &'a [bool], lambda: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(invalid(format!("{} rows but {} labels", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(invalid("empty design matrix"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let dim = x[0].as_ref().len();
        for (i, row) in x.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(invalid(format!("row {i} has {} columns, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(Self { x, y, lambda, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn margin(&self, row: &[f64], params: &[f64]) -> f64 {
        row.iter().zip(params).map(|(a, b)| a * b).sum::<f64>() + params[self.dim]
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let loss: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(row, &yi)| {
                let z = self.margin(row.as_ref(), params);
                softplus(z) - if yi { z } else { 0.0 }
            })
            .sum();
        let reg: f64 = params[..self.dim].iter().map(|w| w * w).sum();
        loss / n + 0.5 * self.lambda * reg
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let n = self.x.len() as f64;
        let mut g = vec![0.0; self.dim + 1];
        for (row, &yi) in self.x.iter().zip(self.y) {
            let row = row.as_ref();
            let r = sigmoid(self.margin(row, params)) - if yi { 1.0 } else { 0.0 };
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
            g[self.dim] += r;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < self.dim {
                *gj += self.lambda * params[j];
            }
        }
        g
    }

    fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let d = self.dim + 1;
        let n = self.x.len() as f64;
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut ext = vec![1.0; d];
        for row in self.x {
            let row = row.as_ref();
            let p = sigmoid(self.margin(row, params));
            let w = p * (1.0 - p);
            ext[..self.dim].copy_from_slice(row);
            // Upper triangle only; mirrored below.
            for a in 0..d {
                let wa = w * ext[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..d {
                    h[(a, b)] += wa * ext[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = h[(a, b)] / n;
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
            if a < self.dim {
                h[(a, a)] += self.lambda;
            }
        }
        h
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iterations from the origin until the gradient norm drops to
/// [`GRAD_TOL`] or [`MAX_ITERATIONS`] is reached.
pub fn fit_logistic<R: AsRef<[f64]>>(x: &[R], y: &[bool], lambda: f64) -> Result<LogisticFit> {
    let obj = LogisticObjective::new(x, y, lambda)?;
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {positives} positive of {}",
            y.len()
        )));
    }

    let d = obj.dim() + 1;
    let mut params = vec![0.0; d];
    let mut f = obj.value(&params);
    let mut g = obj.gradient(&params);
    let mut gnorm = norm(&g);
    let mut iterations = 0;

    while gnorm > GRAD_TOL && iterations < MAX_ITERATIONS {
        iterations += 1;
        let step = newton_direction(&obj.hessian(&params), &g);
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let (dir, slope) = if slope > 0.0 {
            (step, slope)
        } else {
            // Not a descent direction (numerically); fall back to the gradient.
            let s = g.iter().map(|v| v * v).sum();
            (g.clone(), s)
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = params.iter().zip(&dir).map(|(p, s)| p - t * s).collect();
            let fc = obj.value(&cand);
            if fc <= f - 1e-4 * t * slope + 1e-15 * f.abs().max(1.0) {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let gc = obj.gradient(&cand);
        let gc_norm = norm(&gc);
        if fc >= f && gc_norm >= gnorm {
            break;
        }
        params = cand;
        f = fc;
        g = gc;
        gnorm = gc_norm;
    }

    let bias = params.pop().unwrap_or(0.0);
    if params.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::InvalidArgument("solver produced non-finite weights".into()));
    }
    Ok(LogisticFit {
        weights: params,
        bias,
        meta: TrainMeta {
            iterations,
            final_gradient_norm: gnorm,
        },
    })
}

fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let rhs = DVector::from_column_slice(g);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut hj = h.clone();
        if jitter > 0.0 {
            for i in 0..hj.nrows() {
                hj[(i, i)] += jitter;
            }
        }
        if let Some(ch) = hj.cholesky() {
            return ch.solve(&rhs).iter().copied().collect();
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
    }
    g.to_vec()
}
