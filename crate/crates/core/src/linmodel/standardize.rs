use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-dimension affine map to zero mean and unit (population) variance.
/// Constant dimensions map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(vectors: &[R]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(invalid(format!(
                "standardizer needs at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].as_ref().len();
        if let Some(bad) = vectors.iter().position(|v| v.as_ref().len() != dim) {
            return Err(invalid(format!("vector {bad} has length {}, expected {dim}", vectors[bad].as_ref().len())));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut var = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                let d = x - m;
                *s += d * d;
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut constant = Vec::with_capacity(dim);
        for (s, m) in var.iter().zip(&mean) {
            let sd = (s / n).sqrt();
            if !sd.is_finite() {
                return Err(invalid("non-finite value in standardizer input"));
            }
            let is_const = sd <= 1e-12 * m.abs().max(1.0);
            constant.push(is_const);
            std.push(if is_const { 1.0 } else { sd });
        }
        Ok(Self { mean, std, constant })
    }

    /// Identity map of the given width.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.transform_into(x, &mut out);
        out
    }

    pub fn transform_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(&self.std)
                .zip(&self.constant)
                .map(|(((x, m), s), c)| if *c { 0.0 } else { (x - m) / s }),
        );
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}
