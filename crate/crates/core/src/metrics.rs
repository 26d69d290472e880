//! Scalar evaluation metrics: ratio errors for price and mass, per-object
//! material F1, review-weighted ratings KL, and binary classification scores.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::taxonomy::{HardLabel, MaterialLabelState, PROB_CLIP};

fn check_positive(p: f64, t: f64) -> Result<()> {
    if p > 0.0 && t > 0.0 && p.is_finite() && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("ratio metrics need positive finite inputs, got p={p}, t={t}")))
    }
}

/// Min ratio error `min(p/t, t/p)`; 1.0 is a perfect prediction.
pub fn mnre(p: f64, t: f64) -> Result<f64> {
    check_positive(p, t)?;
    Ok((p / t).min(t / p))
}

/// Absolute log-difference error `|ln p - ln t|`.
pub fn alde(p: f64, t: f64) -> Result<f64> {
    check_positive(p, t)?;
    Ok((p.ln() - t.ln()).abs())
}

/// Star-rating distribution (1..5 stars).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsDistribution {
    pub probs: [f64; 5],
    pub n_reviews: u64,
}

impl RatingsDistribution {
    pub fn new(probs: [f64; 5], n_reviews: u64) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("rating probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("rating probabilities sum to {total}, expected 1")));
        }
        Ok(Self { probs, n_reviews })
    }

    /// Normalizes a 1..5 star histogram; `None` when it has no reviews.
    pub fn from_histogram(hist: [u64; 5]) -> Option<Self> {
        let n: u64 = hist.iter().sum();
        if n == 0 {
            return None;
        }
        let probs = hist.map(|c| c as f64 / n as f64);
        Some(Self { probs, n_reviews: n })
    }

    pub fn weight(&self) -> f64 {
        review_weight(self.n_reviews)
    }
}

/// `ln(1 + n)`: zero for listings without reviews.
pub fn review_weight(n_reviews: u64) -> f64 {
    (n_reviews as f64).ln_1p()
}

/// Prediction probabilities clipped to at least [`PROB_CLIP`] and renormalized.
pub fn clip_distribution(probs: &[f64; 5]) -> [f64; 5] {
    let clipped = probs.map(|p| p.max(PROB_CLIP));
    let total: f64 = clipped.iter().sum();
    clipped.map(|p| p / total)
}

/// `KL(true || pred)` after clipping the prediction.
pub fn ratings_kl(truth: &RatingsDistribution, pred: &RatingsDistribution) -> f64 {
    kl_divergence(&truth.probs, &clip_distribution(&pred.probs))
}

pub(crate) fn kl_divergence(truth: &[f64; 5], pred: &[f64; 5]) -> f64 {
    truth
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t / p).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Review-weighted mean KL over `(truth, prediction)` pairs; weights come from
/// the true distribution's review count. Returns `None` when every weight is 0.
pub fn weighted_mean_kl(batch: &[(RatingsDistribution, RatingsDistribution)]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (truth, pred) in batch {
        let w = truth.weight();
        if w > 0.0 {
            num += w * ratings_kl(truth, pred);
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Per-object F1 of the positive class over the hard-labeled taxonomy nodes,
/// with predictions binarized at `threshold`.
pub fn object_material_f1(pred: &[f64], truth: &MaterialLabelState, threshold: f64) -> Result<f64> {
    if pred.len() != truth.hard.len() {
        return Err(invalid(format!(
            "{} predictions for {} taxonomy nodes",
            pred.len(),
            truth.hard.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut labeled = 0usize;
    for (h, &p) in truth.hard.iter().zip(pred) {
        let predicted = p >= threshold;
        match h {
            HardLabel::Unknown => continue,
            HardLabel::Positive if predicted => tp += 1,
            HardLabel::Positive => fn_ += 1,
            HardLabel::Negative if predicted => fp += 1,
            HardLabel::Negative => {}
        }
        labeled += 1;
    }
    if labeled == 0 || tp + fn_ == 0 {
        return Err(invalid("object has no positive labeled material nodes"));
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Dataset-level material F1: the mean of per-object scores.
pub fn mean_object_material_f1(
    preds: &[Vec<f64>],
    truths: &[MaterialLabelState],
    threshold: f64,
) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(invalid("need equally many (non-zero) predictions and truths"));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        total += object_material_f1(p, t, threshold)?;
    }
    Ok(total / preds.len() as f64)
}

/// Precision, recall, F1 and accuracy; `None` marks an undefined metric
/// (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn scores(&self) -> BinaryScores {
        binary_prf(self.tp, self.fp, self.fn_, self.tn)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_prf(tp: u64, fp: u64, fn_: u64, tn: u64) -> BinaryScores {
    BinaryScores {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
    }
}
