use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, sigmoid};
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const DEFAULT_FOLDS: usize = 20;
const MAX_SPLIT_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MislabelScore {
    /// Row index into the labeled set.
    pub index: usize,
    /// `|y - p_heldout|`; higher means more likely mislabeled.
    pub score: f64,
    pub heldout_prob: f64,
}

/// Seeded fold assignment in which every training split holds both classes.
pub fn assign_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    if y.len() < k {
        return Err(invalid(format!("{} labeled objects is fewer than {k} folds", y.len())));
    }
    let total_pos = y.iter().filter(|&&v| v).count();
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut rng::seeded_n(seed, "kfold", attempt));
        let mut fold = vec![0; y.len()];
        let mut fold_pos = vec![0usize; k];
        let mut fold_len = vec![0usize; k];
        for (pos, &i) in order.iter().enumerate() {
            fold[i] = pos % k;
            fold_len[pos % k] += 1;
            if y[i] {
                fold_pos[pos % k] += 1;
            }
        }
        let splittable = (0..k).all(|f| {
            let train_pos = total_pos - fold_pos[f];
            let train_neg = (y.len() - total_pos) - (fold_len[f] - fold_pos[f]);
            train_pos > 0 && train_neg > 0
        });
        if splittable {
            return Ok(fold);
        }
    }
    Err(Error::DegenerateLabels(format!(
        "no {k}-fold split with both classes in every training set after {MAX_SPLIT_ATTEMPTS} attempts"
    )))
}

/// Cross-validated disagreement between each label and a model that never saw it.
pub fn mislabel_scores_kfold<R: AsRef<[f64]>>(
    x: &[R],
    y: &[bool],
    k: usize,
    lambda: f64,
    seed: u64,
) -> Result<Vec<MislabelScore>> {
    if x.len() != y.len() {
        return Err(invalid(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let folds = assign_folds(y, k, seed)?;
    let mut scores = vec![
        MislabelScore {
            index: 0,
            score: 0.0,
            heldout_prob: 0.0
        };
        y.len()
    ];
    for f in 0..k {
        let (train_x, train_y): (Vec<&[f64]>, Vec<bool>) = folds
            .iter()
            .enumerate()
            .filter(|(_, &fi)| fi != f)
            .map(|(i, _)| (x[i].as_ref(), y[i]))
            .unzip();
        let fit = fit_logistic(&train_x, &train_y, lambda)?;
        for (i, _) in folds.iter().enumerate().filter(|(_, &fi)| fi == f) {
            let row = x[i].as_ref();
            let z = row.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() + fit.bias;
            let p = sigmoid(z);
            let target = if y[i] { 1.0 } else { 0.0 };
            scores[i] = MislabelScore {
                index: i,
                score: (target - p).abs(),
                heldout_prob: p,
            };
        }
    }
    Ok(scores)
}

/// Orders scores descending, ties by ascending index.
pub fn rank_by_score(scores: &mut [MislabelScore]) {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
}
