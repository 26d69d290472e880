use std::collections::BTreeMap;

use super::consistency::{HardLabel, MaterialLabelState};
use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm.
pub const PROB_CLIP: f64 = 1e-7;

/// Parent id -> (child id -> probability of that child given the parent).
pub type ConditionalPrediction = BTreeMap<String, BTreeMap<String, f64>>;

/// Clipped natural log; only the argument of the log is clipped so a perfect
/// prediction scores exactly zero.
fn clipped_ln(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0).ln()
}

/// Mean binary cross-entropy over the nodes that carry a hard label.
///
/// Unknown nodes, which include the subtypes below the most specific
/// observed material, contribute nothing, so a model is never penalized for
/// being more specific than the label.
pub fn masked_bce(pred: &[f64], labels: &MaterialLabelState) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, h) in labels.hard.iter().enumerate() {
        let term = match h {
            HardLabel::Positive => -clipped_ln(pred[i]),
            HardLabel::Negative => -clipped_ln(1.0 - pred[i]),
            HardLabel::Unknown => continue,
        };
        total += term;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `w_l = 1 / l` for levels `1..=depth`.
pub fn default_level_weights(depth: usize) -> Vec<f64> {
    (1..=depth).map(|l| 1.0 / l as f64).collect()
}

/// Weighted mean over levels of `-ln p(correct child | correct parent)`.
///
/// `path` is root-first and includes the root; level `l` scores the step from
/// `path[l - 1]` to `path[l]`. Only the distribution under the correct parent
/// is consulted at each level.
pub fn hierarchical_ce(pred: &ConditionalPrediction, path: &[String], level_weights: &[f64]) -> Result<f64> {
    let levels = path.len().saturating_sub(1);
    if levels == 0 {
        return Err(Error::InvalidArgument("path must contain at least one level below the root".into()));
    }
    if level_weights.len() < levels {
        return Err(Error::InvalidArgument(format!(
            "{} level weights for a path with {levels} levels",
            level_weights.len()
        )));
    }
    if level_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("level weights must be positive".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, step) in path.windows(2).enumerate() {
        let (parent, child) = (&step[0], &step[1]);
        let dist = pred.get(parent).ok_or_else(|| {
            Error::InvalidArgument(format!("no child distribution for node {parent:?}"))
        })?;
        let p = dist.get(child).copied().unwrap_or(0.0);
        num += level_weights[l] * -clipped_ln(p);
        den += level_weights[l];
    }
    Ok(num / den)
}

/// Mean over instances of the fraction of levels predicted correctly.
///
/// Paths are root-first and include the root, which is not scored. A level is
/// correct when the predicted node equals the true node; ids are unique, so
/// this implies the parent was also right.
pub fn hierarchical_accuracy(pred_paths: &[Vec<String>], true_paths: &[Vec<String>]) -> Result<f64> {
    if pred_paths.len() != true_paths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted paths for {} true paths",
            pred_paths.len(),
            true_paths.len()
        )));
    }
    if true_paths.is_empty() {
        return Err(Error::InvalidArgument("no instances".into()));
    }
    let mut total = 0.0;
    for (pred, truth) in pred_paths.iter().zip(true_paths) {
        let levels = truth.len().saturating_sub(1);
        if levels == 0 {
            return Err(Error::InvalidArgument("true path has no levels below the root".into()));
        }
        let correct = (1..truth.len())
            .filter(|&l| pred.get(l) == Some(&truth[l]))
            .count();
        total += correct as f64 / levels as f64;
    }
    Ok(total / true_paths.len() as f64)
}

/// Like [`hierarchical_accuracy`], but the prediction at each level is the
/// most probable child of the *true* parent (ties go to the smaller id).
pub fn hierarchical_accuracy_conditional(
    preds: &[ConditionalPrediction],
    true_paths: &[Vec<String>],
) -> Result<f64> {
    let argmax_paths = preds
        .iter()
        .zip(true_paths)
        .map(|(pred, truth)| {
            let mut out = vec![truth.first().cloned().unwrap_or_default()];
            for parent in truth.iter().take(truth.len().saturating_sub(1)) {
                let best = pred.get(parent).and_then(|dist| {
                    dist.iter()
                        .fold(None::<(&String, f64)>, |acc, (id, &p)| match acc {
                            Some((_, bp)) if bp >= p => acc,
                            _ => Some((id, p)),
                        })
                        .map(|(id, _)| id.clone())
                });
                out.push(best.unwrap_or_default());
            }
            out
        })
        .collect::<Vec<_>>();
    hierarchical_accuracy(&argmax_paths, true_paths)
}
