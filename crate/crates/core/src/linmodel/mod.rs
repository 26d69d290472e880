//! Regularized logistic regression written from scratch: standardization,
//! a damped-Newton solver, prediction, and k-fold mislabel scoring.

mod kfold;
mod logistic;
mod standardize;

use serde::{Deserialize, Serialize};

use crate::datastore::ObjectRecord;
use crate::error::{invalid, Error, Result};
use crate::textmatch::KeywordFeatureSet;

pub use kfold::{assign_folds, mislabel_scores_kfold, rank_by_score, MislabelScore, DEFAULT_FOLDS};
pub use logistic::{
    fit_logistic, sigmoid, softplus, LogisticFit, LogisticObjective, TrainMeta, DEFAULT_LAMBDA, GRAD_TOL,
    MAX_ITERATIONS,
};
pub use standardize::Standardizer;

/// Logistic model over `[standardize(embedding), keyword_bits]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// Keyword feature-set version the model was trained against.
    pub feature_version: u64,
    pub n_keywords: usize,
    pub train_meta: TrainMeta,
}

/// Appends keyword bits (as 0/1) to an already standardized embedding.
pub fn design_row(standardized: &[f64], bits: &[bool]) -> Vec<f64> {
    let mut row = Vec::with_capacity(standardized.len() + bits.len());
    row.extend_from_slice(standardized);
    row.extend(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    row
}

impl LinearModel {
    pub fn from_fit(fit: LogisticFit, lambda: f64, standardizer: Standardizer, features: &KeywordFeatureSet) -> Result<Self> {
        if fit.weights.len() != standardizer.dim() + features.len() {
            return Err(invalid(format!(
                "{} weights for {} embedding dims + {} keywords",
                fit.weights.len(),
                standardizer.dim(),
                features.len()
            )));
        }
        Ok(Self {
            weights: fit.weights,
            bias: fit.bias,
            lambda,
            standardizer,
            feature_version: features.version(),
            n_keywords: features.len(),
            train_meta: fit.meta,
        })
    }

    /// Fits on design rows built with [`design_row`].
    pub fn fit<R: AsRef<[f64]>>(
        rows: &[R],
        y: &[bool],
        lambda: f64,
        standardizer: Standardizer,
        features: &KeywordFeatureSet,
    ) -> Result<Self> {
        let fit = fit_logistic(rows, y, lambda)?;
        Self::from_fit(fit, lambda, standardizer, features)
    }

    pub fn zero(standardizer: Standardizer, features: &KeywordFeatureSet) -> Self {
        Self {
            weights: vec![0.0; standardizer.dim() + features.len()],
            bias: 0.0,
            lambda: DEFAULT_LAMBDA,
            standardizer,
            feature_version: features.version(),
            n_keywords: features.len(),
            train_meta: TrainMeta {
                iterations: 0,
                final_gradient_norm: 0.0,
            },
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn margin_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin_row(row))
    }

    /// Probability from a standardized embedding plus keyword bits.
    pub fn predict_parts(&self, standardized: &[f64], bits: &[bool]) -> f64 {
        let d = self.embedding_dim();
        let z: f64 = standardized.iter().zip(&self.weights[..d]).map(|(a, b)| a * b).sum::<f64>()
            + bits
                .iter()
                .zip(&self.weights[d..])
                .filter(|(b, _)| **b)
                .map(|(_, w)| w)
                .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }

    pub fn check_features(&self, features: &KeywordFeatureSet) -> Result<()> {
        if features.version() != self.feature_version || features.len() != self.n_keywords {
            return Err(Error::StaleModel {
                model: self.feature_version,
                current: features.version(),
            });
        }
        Ok(())
    }

    pub fn predict_proba(&self, object: &ObjectRecord, features: &KeywordFeatureSet) -> Result<f64> {
        self.check_features(features)?;
        if object.embedding.len() != self.embedding_dim() {
            return Err(invalid(format!(
                "object {:?} has {} dims, model expects {}",
                object.id,
                object.embedding.len(),
                self.embedding_dim()
            )));
        }
        let z = self.standardizer.transform(&object.embedding);
        let bits = crate::textmatch::keyword_bits(object, features);
        Ok(self.predict_parts(&z, &bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_predicts_half() {
        let f = KeywordFeatureSet::new(["x"]).unwrap();
        let m = LinearModel::zero(Standardizer::identity(2), &f);
        let o = ObjectRecord::new("a", "xx", vec![3.0, -1.0]);
        assert_eq!(m.predict_proba(&o, &f).unwrap(), 0.5);
    }

    #[test]
    fn saturated_bias() {
        let f = KeywordFeatureSet::default();
        let mut m = LinearModel::zero(Standardizer::identity(1), &f);
        m.bias = 50.0;
        let o = ObjectRecord::new("a", "", vec![0.0]);
        assert!(m.predict_proba(&o, &f).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn hand_computed_probability() {
        let f = KeywordFeatureSet::default();
        let mut m = LinearModel::zero(Standardizer::identity(2), &f);
        m.weights = vec![1.0, 0.0];
        let o = ObjectRecord::new("a", "", vec![2.0, 7.0]);
        let p = m.predict_proba(&o, &f).unwrap();
        assert!((p - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-15);
        assert!((p - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn stale_feature_version_detected() {
        let mut f = KeywordFeatureSet::new(["a"]).unwrap();
        let m = LinearModel::zero(Standardizer::identity(1), &f);
        f.push("b").unwrap();
        let o = ObjectRecord::new("a", "", vec![0.0]);
        assert!(matches!(m.predict_proba(&o, &f), Err(Error::StaleModel { .. })));
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let f = KeywordFeatureSet::new(["a"]).unwrap();
        let mut m = LinearModel::zero(Standardizer::identity(2), &f);
        m.weights = vec![0.1 + 0.2, std::f64::consts::PI / 3.0, -1e-300];
        m.bias = 1.0 / 3.0;
        let back: LinearModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(
            back.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            m.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back, m);
    }
}
