use serde::{Deserialize, Serialize};

use super::Taxonomy;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-6;
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HardLabel {
    Positive,
    Negative,
    Unknown,
}

/// Per-node hard labels and probabilities for one object, indexed like the
/// taxonomy's nodes.
///
/// `fixed[i]` marks values the consistency projection must not move
/// (manual or smart-labeled values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialLabelState {
    pub hard: Vec<HardLabel>,
    pub prob: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl MaterialLabelState {
    pub fn unknown(n: usize) -> Self {
        Self {
            hard: vec![HardLabel::Unknown; n],
            prob: vec![0.0; n],
            fixed: vec![false; n],
        }
    }

    /// Hard labels implied by a set of observed material nodes.
    ///
    /// Observed nodes and their ancestors are positive. Proper descendants of
    /// the most specific positive nodes are unknown (the object may or may not
    /// be made of a subtype). Every other node is negative. All hard-labeled
    /// nodes are fixed at 0 or 1.
    pub fn from_observed(taxonomy: &Taxonomy, observed: &[usize]) -> Self {
        let n = taxonomy.len();
        let mut hard = vec![HardLabel::Negative; n];
        for &o in observed {
            hard[o] = HardLabel::Positive;
            for a in taxonomy.ancestors(o) {
                hard[a] = HardLabel::Positive;
            }
        }
        let deepest: Vec<usize> = (0..n)
            .filter(|&v| {
                hard[v] == HardLabel::Positive
                    && !taxonomy
                        .children(v)
                        .iter()
                        .any(|&c| hard[c] == HardLabel::Positive)
            })
            .collect();
        for v in 0..n {
            if hard[v] == HardLabel::Negative
                && deepest.iter().any(|&d| taxonomy.is_descendant(v, d))
            {
                hard[v] = HardLabel::Unknown;
            }
        }
        let prob = hard
            .iter()
            .map(|h| if *h == HardLabel::Positive { 1.0 } else { 0.0 })
            .collect();
        let fixed = hard.iter().map(|h| *h != HardLabel::Unknown).collect();
        Self { hard, prob, fixed }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.hard
            .iter()
            .enumerate()
            .filter(|(_, h)| **h == HardLabel::Positive)
            .map(|(i, _)| i)
    }

    /// Largest violation of `max child <= parent <= min(1, sum children)`.
    pub fn max_violation(&self, taxonomy: &Taxonomy) -> f64 {
        let mut worst = 0.0f64;
        for v in 0..taxonomy.len() {
            let kids = taxonomy.children(v);
            if kids.is_empty() {
                continue;
            }
            let mx = kids.iter().map(|&c| self.prob[c]).fold(0.0, f64::max);
            let sum: f64 = kids.iter().map(|&c| self.prob[c]).sum();
            worst = worst
                .max(mx - self.prob[v])
                .max(self.prob[v] - sum.min(1.0));
        }
        worst
    }

    /// Hard positive at a node implies hard positive at all of its ancestors.
    pub fn hard_labels_consistent(&self, taxonomy: &Taxonomy) -> bool {
        self.positives()
            .all(|v| taxonomy.ancestors(v).all(|a| self.hard[a] == HardLabel::Positive))
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub state: MaterialLabelState,
    /// Number of sweep pairs run, including the final one that confirmed convergence.
    pub iterations: usize,
    pub converged: bool,
}

/// Moves unfixed probabilities until every internal node lies between its
/// largest child and the capped sum of its children.
///
/// Each iteration is an upward sweep that clamps unfixed parents into their
/// children's bounds, followed by a downward sweep that rescales unfixed
/// children of any node whose children no longer fit. Children are kept
/// inside the range their own fixed descendants allow, so the two sweeps
/// never fight each other.
pub fn project_consistent(state: &MaterialLabelState, taxonomy: &Taxonomy) -> Result<Projection> {
    let n = taxonomy.len();
    if state.prob.len() != n || state.fixed.len() != n || state.hard.len() != n {
        return Err(Error::InvalidArgument(format!(
            "label state has {} nodes, taxonomy has {n}",
            state.prob.len()
        )));
    }
    if let Some(i) = state.prob.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {} at node {:?} outside [0, 1]",
            state.prob[i],
            taxonomy.id(i)
        )));
    }

    let (lower, upper) = feasible_ranges(state, taxonomy)?;
    let fixed = &state.fixed;
    let mut p = state.prob.clone();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let before = p.clone();

        for v in taxonomy.postorder() {
            let kids = taxonomy.children(v);
            if fixed[v] || kids.is_empty() {
                continue;
            }
            let mx = kids.iter().map(|&c| p[c]).fold(0.0, f64::max);
            let cap = kids.iter().map(|&c| p[c]).sum::<f64>().min(1.0);
            p[v] = p[v].clamp(mx, cap);
        }

        for &v in taxonomy.preorder() {
            fit_children(v, &mut p, fixed, &lower, &upper, taxonomy);
        }

        let change = p
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    Ok(Projection {
        state: MaterialLabelState {
            hard: state.hard.clone(),
            prob: p,
            fixed: state.fixed.clone(),
        },
        iterations,
        converged,
    })
}

/// Range each node's value can take given only the fixed values in its subtree.
fn feasible_ranges(state: &MaterialLabelState, taxonomy: &Taxonomy) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = taxonomy.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![1.0; n];
    let mut violating: Vec<usize> = Vec::new();

    for v in taxonomy.postorder() {
        let kids = taxonomy.children(v);
        let (lo, hi) = if kids.is_empty() {
            (0.0, 1.0)
        } else {
            let lo = kids.iter().map(|&c| lower[c]).fold(0.0, f64::max);
            let hi = kids.iter().map(|&c| upper[c]).sum::<f64>().min(1.0);
            (lo, hi)
        };
        if state.fixed[v] {
            let f = state.prob[v];
            if f < lo - FEASIBILITY_TOL {
                violating.push(v);
                violating.extend(kids.iter().filter(|&&c| lower[c] > f));
            } else if f > hi + FEASIBILITY_TOL {
                violating.push(v);
                violating.extend(kids.iter().copied());
            }
            lower[v] = f;
            upper[v] = f;
        } else {
            lower[v] = lo;
            upper[v] = hi;
        }
    }

    if violating.is_empty() {
        Ok((lower, upper))
    } else {
        let mut nodes: Vec<String> = violating.iter().map(|&v| taxonomy.id(v).to_string()).collect();
        nodes.dedup();
        Err(Error::InfeasibleConstraints { nodes })
    }
}

fn fit_children(
    v: usize,
    p: &mut [f64],
    fixed: &[bool],
    lower: &[f64],
    upper: &[f64],
    taxonomy: &Taxonomy,
) {
    let kids = taxonomy.children(v);
    if kids.is_empty() {
        return;
    }
    let target = p[v];
    let cap = |c: usize| upper[c].min(target);

    for &c in kids {
        if !fixed[c] {
            p[c] = p[c].clamp(lower[c], cap(c).max(lower[c]));
        }
    }

    // Multiplicative rescale of the unfixed children that still have headroom.
    for _ in 0..=kids.len() {
        let sum: f64 = kids.iter().map(|&c| p[c]).sum();
        let deficit = target - sum;
        if deficit <= 0.0 {
            return;
        }
        let free: Vec<usize> = kids
            .iter()
            .copied()
            .filter(|&c| !fixed[c] && p[c] > 0.0 && p[c] < cap(c))
            .collect();
        if free.is_empty() {
            break;
        }
        let free_sum: f64 = free.iter().map(|&c| p[c]).sum();
        let scale = (free_sum + deficit) / free_sum;
        for c in free {
            p[c] = (p[c] * scale).min(cap(c));
        }
    }

    // Children stuck at zero cannot be scaled; fill them in id order.
    let mut deficit = target - kids.iter().map(|&c| p[c]).sum::<f64>();
    for &c in kids {
        if deficit <= 0.0 {
            break;
        }
        if fixed[c] {
            continue;
        }
        let add = (cap(c) - p[c]).max(0.0).min(deficit);
        p[c] += add;
        deficit -= add;
    }
}
