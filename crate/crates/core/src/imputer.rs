//! Synthetic fill-in of missing attributes, in generations.
//!
//! Generation 1 fits one linear head per attribute on the objects where that
//! attribute is observed, using the embedding plus every other attribute as
//! input (missing inputs take the column mean). Its predictions fill the
//! gaps. Generation 2 refits on the observed-plus-synthetic catalog, now with
//! filled inputs, and refills. Observed values are never touched.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datastore::{Catalog, Materials, ObjectRecord};
use crate::embedder::ratings_vector;
use crate::error::{invalid, Error, Result};
use crate::linmodel::{fit_logistic, sigmoid};
use crate::metrics::{self, RatingsDistribution};
use crate::rng;
use crate::taxonomy::{
    default_level_weights, hierarchical_ce, masked_bce, match_material_string, project_consistent,
    ConditionalPrediction, HardLabel, MaterialLabelState, Taxonomy,
};

/// A head needs at least this many rows with its target present.
pub const MIN_OBSERVED: usize = 10;
/// Price floor before taking logs (free listings exist).
const MIN_PRICE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Target {
    Price,
    Mass,
    Materials,
    Category,
    Ratings,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::Price, Target::Mass, Target::Materials, Target::Category, Target::Ratings];

    pub fn name(self) -> &'static str {
        match self {
            Target::Price => "price",
            Target::Mass => "mass",
            Target::Materials => "materials",
            Target::Category => "category",
            Target::Ratings => "ratings",
        }
    }
}

/// Relative loss weights per head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub price: f64,
    pub mass: f64,
    pub materials: f64,
    pub categories: f64,
    pub ratings: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            price: 5.0,
            mass: 5.0,
            materials: 140.0,
            categories: 1.0,
            ratings: 1.0,
        }
    }
}

impl LossWeights {
    pub fn of(&self, t: Target) -> f64 {
        match t {
            Target::Price => self.price,
            Target::Mass => self.mass,
            Target::Materials => self.materials,
            Target::Category => self.categories,
            Target::Ratings => self.ratings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub weights: LossWeights,
    /// L2 penalty on head weights (biases unpenalized).
    pub l2: f64,
    /// Share of fully observed objects held out for validation.
    pub validation_fraction: f64,
    /// Full-batch optimizer iterations for the softmax heads.
    pub softmax_iterations: usize,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            l2: 1e-3,
            validation_fraction: 0.2,
            softmax_iterations: 400,
            seed: crate::datastore::DEFAULT_SEED,
        }
    }
}

/// Taxonomies the material and category heads work over.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImputeContext<'a> {
    pub materials: Option<&'a Taxonomy>,
    pub categories: Option<&'a Taxonomy>,
}

impl ImputeContext<'_> {
    fn targets(&self) -> Vec<Target> {
        Target::ALL
            .into_iter()
            .filter(|t| match t {
                Target::Materials => self.materials.is_some(),
                Target::Category => self.categories.is_some(),
                _ => true,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Attribute access

/// Hard material labels from the listing's own materials, if any.
pub fn observed_material_state(object: &ObjectRecord, taxonomy: &Taxonomy) -> Option<MaterialLabelState> {
    let nodes: Vec<usize> = match object.materials.as_ref()? {
        Materials::Names(names) => names
            .iter()
            .flat_map(|n| match taxonomy.index_of(n) {
                Some(i) => vec![i],
                None => match_material_string(n, taxonomy)
                    .nodes
                    .iter()
                    .filter_map(|id| taxonomy.index_of(id))
                    .collect(),
            })
            .collect(),
        Materials::Probabilities(m) => m
            .iter()
            .filter(|(_, &p)| p >= 0.5)
            .filter_map(|(id, _)| taxonomy.index_of(id))
            .collect(),
    };
    Some(MaterialLabelState::from_observed(taxonomy, &nodes))
}

/// Full per-node probability vector: observed hard values plus synthetic
/// values for the nodes left open.
pub fn material_probabilities(object: &ObjectRecord, taxonomy: &Taxonomy) -> Option<Vec<f64>> {
    let observed = observed_material_state(object, taxonomy);
    let synthetic = object.synthetic.materials.as_ref();
    if observed.is_none() && synthetic.is_none() {
        return None;
    }
    let mut v = observed.map_or_else(|| vec![0.0; taxonomy.len()], |s| s.prob);
    for (id, &p) in synthetic.into_iter().flatten() {
        if let Some(i) = taxonomy.index_of(id) {
            v[i] = p;
        }
    }
    Some(v)
}

fn observed_target_present(o: &ObjectRecord, t: Target) -> bool {
    match t {
        Target::Price => o.price.is_some(),
        Target::Mass => o.mass_kg.is_some(),
        Target::Materials => o.materials.is_some(),
        Target::Category => o.category_path.is_some(),
        Target::Ratings => o.ratings_hist.is_some_and(|h| h.iter().sum::<u64>() > 0),
    }
}

fn synthetic_target_present(o: &ObjectRecord, t: Target) -> bool {
    match t {
        Target::Price => o.synthetic.price.is_some(),
        Target::Mass => o.synthetic.mass_kg.is_some(),
        Target::Materials => o.synthetic.materials.is_some() && o.materials.is_none(),
        Target::Category => o.synthetic.category_path.is_some(),
        Target::Ratings => o.synthetic.ratings.is_some(),
    }
}

/// Whether every imputable attribute is observed on `o`.
pub fn fully_observed(o: &ObjectRecord, ctx: &ImputeContext<'_>) -> bool {
    ctx.targets().into_iter().all(|t| observed_target_present(o, t))
}

// ---------------------------------------------------------------------------
// Head inputs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Group {
    Embedding,
    Attr(Target),
}

/// Per-column standardization of `[embedding, attribute groups...]`;
/// unavailable attribute columns encode as 0, the column mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    groups: Vec<(Group, usize, usize)>,
    mean: Vec<f64>,
    std: Vec<f64>,
    use_synthetic: bool,
}

impl InputEncoder {
    fn group_values(o: &ObjectRecord, g: Group, ctx: &ImputeContext<'_>, use_synthetic: bool) -> Option<Vec<f64>> {
        let pick = |obs: Option<f64>, syn: Option<f64>| if use_synthetic { obs.or(syn) } else { obs };
        match g {
            Group::Embedding => Some(o.embedding.clone()),
            Group::Attr(Target::Price) => pick(o.price, o.synthetic.price).map(|p| vec![p.max(MIN_PRICE).ln()]),
            Group::Attr(Target::Mass) => pick(o.mass_kg, o.synthetic.mass_kg).map(|m| vec![m.ln()]),
            Group::Attr(Target::Materials) => {
                let t = ctx.materials?;
                if use_synthetic {
                    material_probabilities(o, t)
                } else {
                    observed_material_state(o, t).map(|s| s.prob)
                }
            }
            Group::Attr(Target::Category) => {
                let t = ctx.categories?;
                let path = if use_synthetic {
                    o.category_path.as_ref().or(o.synthetic.category_path.as_ref())
                } else {
                    o.category_path.as_ref()
                }?;
                Some(t.nodes().iter().map(|n| f64::from(u8::from(path.contains(&n.id)))).collect())
            }
            Group::Attr(Target::Ratings) => {
                let r = if use_synthetic {
                    ratings_vector(o)
                } else {
                    ratings_vector(o).filter(|_| observed_target_present(o, Target::Ratings))
                };
                r.map(|r| r.to_vec())
            }
        }
    }

    /// Fits column moments over the available values of `rows`.
    pub fn fit(catalog: &Catalog, rows: &[usize], ctx: &ImputeContext<'_>, use_synthetic: bool) -> Self {
        let mut groups = vec![(Group::Embedding, 0, catalog.dim())];
        let mut offset = catalog.dim();
        for t in ctx.targets() {
            let len = match t {
                Target::Price | Target::Mass => 1,
                Target::Materials => ctx.materials.map_or(0, Taxonomy::len),
                Target::Category => ctx.categories.map_or(0, Taxonomy::len),
                Target::Ratings => 5,
            };
            groups.push((Group::Attr(t), offset, len));
            offset += len;
        }
        let mut sum = vec![0.0; offset];
        let mut sq = vec![0.0; offset];
        let mut count = vec![0usize; offset];
        for &r in rows {
            let o = catalog.get(r);
            for &(g, off, len) in &groups {
                if let Some(v) = Self::group_values(o, g, ctx, use_synthetic) {
                    for (j, x) in v.iter().take(len).enumerate() {
                        sum[off + j] += x;
                        sq[off + j] += x * x;
                        count[off + j] += 1;
                    }
                }
            }
        }
        let mut mean = vec![0.0; offset];
        let mut std = vec![1.0; offset];
        for j in 0..offset {
            if count[j] > 0 {
                let n = count[j] as f64;
                mean[j] = sum[j] / n;
                let var = (sq[j] / n - mean[j] * mean[j]).max(0.0);
                std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Self {
            groups,
            mean,
            std,
            use_synthetic,
        }
    }

    /// Standardized design row without the target's own group.
    pub fn design(&self, o: &ObjectRecord, exclude: Option<Target>, ctx: &ImputeContext<'_>) -> Vec<f64> {
        self.design_masked(o, exclude, None, ctx)
    }

    /// As [`design`](Self::design), with the `mask` group encoded as
    /// unavailable.
    fn design_masked(&self, o: &ObjectRecord, exclude: Option<Target>, mask: Option<Target>, ctx: &ImputeContext<'_>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mean.len());
        for &(g, off, len) in &self.groups {
            if exclude.is_some_and(|t| g == Group::Attr(t)) {
                continue;
            }
            let values = if mask.is_some_and(|t| g == Group::Attr(t)) {
                None
            } else {
                Self::group_values(o, g, ctx, self.use_synthetic)
            };
            match values {
                Some(v) => out.extend((0..len).map(|j| (v[j] - self.mean[off + j]) / self.std[off + j])),
                None => out.extend(std::iter::repeat_n(0.0, len)),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Solvers

/// Minimizes mean |x·w + b − y| + (l2/2)‖w‖² by iteratively reweighted
/// least squares.
fn fit_l1_regression(x: &[Vec<f64>], y: &[f64], l2: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let p = d + 1;
    let objective = |w: &DVector<f64>| {
        let mut s = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            s += (pred_linear(w, xi) - yi).abs();
        }
        s / n as f64 + 0.5 * l2 * w.rows(0, d).norm_squared()
    };
    let mut w = DVector::zeros(p);
    // Start from the median, the exact intercept-only optimum.
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    w[d] = sorted[n / 2];
    let mut best = objective(&w);
    for _ in 0..100 {
        let mut a = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (xi, yi) in x.iter().zip(y) {
            let r = (pred_linear(&w, xi) - yi).abs();
            let wt = 1.0 / r.max(1e-6) / n as f64;
            for j in 0..p {
                let xj = if j < d { xi[j] } else { 1.0 };
                rhs[j] += wt * xj * yi;
                for k in 0..=j {
                    let xk = if k < d { xi[k] } else { 1.0 };
                    a[(j, k)] += wt * xj * xk;
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                a[(k, j)] = a[(j, k)];
            }
        }
        // The reweighted system solves min Σ r²/(2|r|) + (l2/2)‖w‖².
        for j in 0..d {
            a[(j, j)] += l2;
        }
        a[(d, d)] += 1e-12;
        let Some(chol) = a.cholesky() else { break };
        let next = chol.solve(&rhs);
        let f = objective(&next);
        let done = (best - f).abs() <= 1e-10 * best.max(1e-12);
        if f <= best {
            w = next;
            best = f;
        }
        if done {
            break;
        }
    }
    (w.rows(0, d).iter().copied().collect(), w[d])
}

fn pred_linear(w: &DVector<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    w.rows(0, d).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

/// Multinomial logistic regression with soft targets and sample weights:
/// minimizes Σ wᵢ·CE(tᵢ, softmax(W xᵢ + b)) / Σ wᵢ + (l2/2)‖W‖², by full-batch
/// Adam with a decaying step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// `k × (d + 1)` row-major, bias last.
    pub params: Vec<f64>,
    pub classes: usize,
    pub dim: usize,
}

impl SoftmaxModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d1 = self.dim + 1;
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.params[c * d1..(c + 1) * d1];
                row[self.dim] + row[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        softmax(&logits)
    }

    pub fn fit(x: &[Vec<f64>], targets: &[Vec<f64>], weights: &[f64], l2: f64, iterations: usize) -> Self {
        let classes = targets[0].len();
        let dim = x.first().map_or(0, Vec::len);
        let d1 = dim + 1;
        let mut model = Self {
            params: vec![0.0; classes * d1],
            classes,
            dim,
        };
        let wsum: f64 = weights.iter().sum();
        // Bias starts at the log class prior.
        for c in 0..classes {
            let prior: f64 = targets.iter().zip(weights).map(|(t, w)| t[c] * w).sum::<f64>() / wsum;
            model.params[c * d1 + dim] = prior.max(1e-6).ln();
        }
        if classes < 2 {
            return model;
        }
        let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut m = vec![0.0; model.params.len()];
        let mut v = vec![0.0; model.params.len()];
        for it in 0..iterations {
            let mut grad = vec![0.0; model.params.len()];
            for ((xi, ti), wi) in x.iter().zip(targets).zip(weights) {
                let p = model.predict(xi);
                for c in 0..classes {
                    let e = wi * (p[c] - ti[c]) / wsum;
                    let g = &mut grad[c * d1..(c + 1) * d1];
                    for j in 0..dim {
                        g[j] += e * xi[j];
                    }
                    g[dim] += e;
                }
            }
            for c in 0..classes {
                for j in 0..dim {
                    grad[c * d1 + j] += l2 * model.params[c * d1 + j];
                }
            }
            let lr = 0.05 * (1e-2f64).powf(it as f64 / iterations.max(1) as f64);
            let step = (it + 1) as i32;
            let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
            for (((p, g), mi), vi) in model.params.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        model
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Heads

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeModel {
    Logistic { weights: Vec<f64>, bias: f64 },
    /// Too few or single-class labels: the (clamped) base rate.
    Constant(f64),
}

impl NodeModel {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            NodeModel::Logistic { weights, bias } => {
                sigmoid(bias + weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            }
            NodeModel::Constant(p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadParams {
    /// Log-space linear regression (price, mass).
    LogLinear { weights: Vec<f64>, bias: f64 },
    /// One logistic model per material node.
    Materials(Vec<NodeModel>),
    /// One softmax over the children of each internal category node.
    Category(BTreeMap<String, (Vec<String>, SoftmaxModel)>),
    /// Softmax over star ratings.
    Ratings(SoftmaxModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeHead {
    pub target: Target,
    pub params: HeadParams,
    pub loss_weight: f64,
    /// Rows the head was fit on.
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedHead {
    pub target: Target,
    pub reason: String,
}

/// Heads of one generation plus the input encoding they were fit with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub generation: u32,
    pub heads: Vec<AttributeHead>,
    pub skipped: Vec<SkippedHead>,
    pub encoder: InputEncoder,
}

/// Rows whose target is present for a generation: observed only in
/// generation 1, observed or synthetic afterwards.
pub fn fit_rows(catalog: &Catalog, rows: &[usize], target: Target, generation: u32) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&r| {
            let o = catalog.get(r);
            observed_target_present(o, target) || (generation >= 2 && synthetic_target_present(o, target))
        })
        .collect()
}

fn price_or_mass(o: &ObjectRecord, t: Target) -> Option<f64> {
    match t {
        Target::Price => o.price.or(o.synthetic.price).map(|p| p.max(MIN_PRICE).ln()),
        Target::Mass => o.mass_kg.or(o.synthetic.mass_kg).map(f64::ln),
        _ => None,
    }
}

fn hard_material_state(o: &ObjectRecord, t: &Taxonomy) -> Option<MaterialLabelState> {
    if o.materials.is_some() {
        return observed_material_state(o, t);
    }
    let probs = material_probabilities(o, t)?;
    let positives: Vec<usize> = (0..t.len()).filter(|&i| probs[i] >= 0.5).collect();
    Some(MaterialLabelState::from_observed(t, &positives))
}

fn category_path(o: &ObjectRecord) -> Option<&Vec<String>> {
    o.category_path.as_ref().or(o.synthetic.category_path.as_ref())
}

/// Ratings target with its review-count weight `ln(1 + n)`; synthetic
/// distributions carry `fallback_weight`.
fn ratings_target(o: &ObjectRecord, fallback_weight: f64) -> Option<(Vec<f64>, f64)> {
    if let Some(h) = o.ratings_hist.filter(|h| h.iter().sum::<u64>() > 0) {
        let n: u64 = h.iter().sum();
        let d = RatingsDistribution::from_histogram(h)?;
        return Some((d.probs.to_vec(), metrics::review_weight(o.num_reviews.unwrap_or(n))));
    }
    o.synthetic.ratings.map(|r| (r.to_vec(), fallback_weight))
}

/// Fits every head over the whole catalog.
pub fn fit_heads(
    catalog: &Catalog,
    ctx: &ImputeContext<'_>,
    generation: u32,
    config: &ImputeConfig,
) -> Result<HeadSet> {
    let rows: Vec<usize> = (0..catalog.len()).collect();
    fit_heads_on(catalog, &rows, ctx, generation, config)
}

pub fn fit_heads_on(
    catalog: &Catalog,
    rows: &[usize],
    ctx: &ImputeContext<'_>,
    generation: u32,
    config: &ImputeConfig,
) -> Result<HeadSet> {
    fit_heads_refilled(catalog, rows, ctx, generation, config, None)
}

/// With `previous` (the heads that filled the catalog), each head's training
/// inputs are refilled with that head's own attribute hidden. A fill computed
/// from an observed target would otherwise hand the target back to its head
/// through another attribute, and the head would learn an association that
/// real values of that attribute do not have.
fn fit_heads_refilled(
    catalog: &Catalog,
    rows: &[usize],
    ctx: &ImputeContext<'_>,
    generation: u32,
    config: &ImputeConfig,
    previous: Option<&HeadSet>,
) -> Result<HeadSet> {
    if !(1..=2).contains(&generation) {
        return Err(invalid(format!("generation must be 1 or 2, got {generation}")));
    }
    let use_synthetic = generation >= 2;
    if use_synthetic && !rows.iter().any(|&r| !catalog.get(r).synthetic.is_empty()) {
        let anything_missing = rows.iter().any(|&r| {
            ctx.targets()
                .into_iter()
                .any(|t| !observed_target_present(catalog.get(r), t))
        });
        if anything_missing {
            return Err(Error::FailedPrecondition(
                "generation 2 needs a catalog filled by generation 1".into(),
            ));
        }
    }
    let encoder = InputEncoder::fit(catalog, rows, ctx, use_synthetic);
    let mut heads = Vec::new();
    let mut skipped = Vec::new();
    for target in ctx.targets() {
        let fit = fit_rows(catalog, rows, target, generation);
        if fit.len() < MIN_OBSERVED {
            skipped.push(SkippedHead {
                target,
                reason: Error::InsufficientData(format!(
                    "{} present on {} objects, need {MIN_OBSERVED}",
                    target.name(),
                    fit.len()
                ))
                .to_string(),
            });
            continue;
        }
        let x: Vec<Vec<f64>> = fit
            .iter()
            .map(|&r| {
                let o = catalog.get(r);
                Ok(match previous.filter(|_| use_synthetic) {
                    Some(prev) => encoder.design(&fill_record(o, prev, ctx, Some(target))?, Some(target), ctx),
                    None => encoder.design(o, Some(target), ctx),
                })
            })
            .collect::<Result<_>>()?;
        let params = match target {
            Target::Price | Target::Mass => {
                let y: Vec<f64> = fit.iter().map(|&r| price_or_mass(catalog.get(r), target).unwrap()).collect();
                let (weights, bias) = fit_l1_regression(&x, &y, config.l2);
                HeadParams::LogLinear { weights, bias }
            }
            Target::Materials => {
                let tax = ctx.materials.expect("materials head requires a taxonomy");
                let states: Vec<MaterialLabelState> = fit
                    .iter()
                    .map(|&r| hard_material_state(catalog.get(r), tax).unwrap())
                    .collect();
                let mut nodes = Vec::with_capacity(tax.len());
                for v in 0..tax.len() {
                    let (xs, ys): (Vec<&Vec<f64>>, Vec<bool>) = states
                        .iter()
                        .zip(&x)
                        .filter_map(|(s, xi)| match s.hard[v] {
                            HardLabel::Positive => Some((xi, true)),
                            HardLabel::Negative => Some((xi, false)),
                            HardLabel::Unknown => None,
                        })
                        .unzip();
                    let pos = ys.iter().filter(|&&b| b).count();
                    let model = if xs.len() < MIN_OBSERVED || pos == 0 || pos == ys.len() {
                        let rate = if ys.is_empty() { 0.5 } else { pos as f64 / ys.len() as f64 };
                        NodeModel::Constant(rate.clamp(1e-3, 1.0 - 1e-3))
                    } else {
                        let f = fit_logistic(&xs, &ys, config.l2)?;
                        NodeModel::Logistic {
                            weights: f.weights,
                            bias: f.bias,
                        }
                    };
                    nodes.push(model);
                }
                HeadParams::Materials(nodes)
            }
            Target::Category => {
                let tax = ctx.categories.expect("category head requires a taxonomy");
                let paths: Vec<&Vec<String>> = fit.iter().map(|&r| category_path(catalog.get(r)).unwrap()).collect();
                let mut per_node = BTreeMap::new();
                for v in 0..tax.len() {
                    if tax.is_leaf(v) {
                        continue;
                    }
                    let children: Vec<String> = tax.children(v).iter().map(|&c| tax.id(c).to_string()).collect();
                    let parent = tax.id(v);
                    let mut xs = Vec::new();
                    let mut ts = Vec::new();
                    for (p, xi) in paths.iter().zip(&x) {
                        if let Some(pos) = p.iter().position(|n| n == parent) {
                            if let Some(next) = p.get(pos + 1) {
                                if let Some(c) = children.iter().position(|ch| ch == next) {
                                    let mut t = vec![0.0; children.len()];
                                    t[c] = 1.0;
                                    xs.push(xi.clone());
                                    ts.push(t);
                                }
                            }
                        }
                    }
                    let model = if xs.is_empty() {
                        SoftmaxModel {
                            params: vec![0.0; children.len() * (encoder_dim(&x) + 1)],
                            classes: children.len(),
                            dim: encoder_dim(&x),
                        }
                    } else {
                        let w = vec![1.0; xs.len()];
                        SoftmaxModel::fit(&xs, &ts, &w, config.l2, config.softmax_iterations)
                    };
                    per_node.insert(parent.to_string(), (children, model));
                }
                HeadParams::Category(per_node)
            }
            Target::Ratings => {
                let observed_w: Vec<f64> = fit
                    .iter()
                    .filter_map(|&r| ratings_target(catalog.get(r), f64::NAN))
                    .map(|(_, w)| w)
                    .filter(|w| w.is_finite())
                    .collect();
                let fallback = if observed_w.is_empty() {
                    1.0
                } else {
                    observed_w.iter().sum::<f64>() / observed_w.len() as f64
                };
                let (ts, ws): (Vec<Vec<f64>>, Vec<f64>) =
                    fit.iter().map(|&r| ratings_target(catalog.get(r), fallback).unwrap()).unzip();
                HeadParams::Ratings(SoftmaxModel::fit(&x, &ts, &ws, config.l2, config.softmax_iterations))
            }
        };
        heads.push(AttributeHead {
            target,
            params,
            loss_weight: config.weights.of(target),
            train_rows: fit.len(),
        });
    }
    Ok(HeadSet {
        generation,
        heads,
        skipped,
        encoder,
    })
}

fn encoder_dim(x: &[Vec<f64>]) -> usize {
    x.first().map_or(0, Vec::len)
}

/// One head's prediction for one object.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Kilograms or currency, back in linear space.
    Value(f64),
    /// Per-node probabilities, consistent with the taxonomy.
    Materials(Vec<f64>),
    Category(ConditionalPrediction),
    Ratings([f64; 5]),
}

impl HeadSet {
    pub fn head(&self, t: Target) -> Option<&AttributeHead> {
        self.heads.iter().find(|h| h.target == t)
    }

    pub fn predict(&self, head: &AttributeHead, o: &ObjectRecord, ctx: &ImputeContext<'_>) -> Result<Prediction> {
        self.predict_masked(head, o, ctx, None)
    }

    fn predict_masked(
        &self,
        head: &AttributeHead,
        o: &ObjectRecord,
        ctx: &ImputeContext<'_>,
        mask: Option<Target>,
    ) -> Result<Prediction> {
        let x = self.encoder.design_masked(o, Some(head.target), mask, ctx);
        Ok(match &head.params {
            HeadParams::LogLinear { weights, bias } => {
                let z = bias + weights.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                Prediction::Value(z.exp())
            }
            HeadParams::Materials(nodes) => {
                let tax = ctx.materials.ok_or_else(|| invalid("materials head without taxonomy"))?;
                let raw: Vec<f64> = nodes.iter().map(|m| m.predict(&x)).collect();
                Prediction::Materials(consistent_materials(o, tax, &raw)?)
            }
            HeadParams::Category(per_node) => Prediction::Category(
                per_node
                    .iter()
                    .map(|(parent, (children, m))| {
                        let p = m.predict(&x);
                        (parent.clone(), children.iter().cloned().zip(p).collect())
                    })
                    .collect(),
            ),
            HeadParams::Ratings(m) => {
                let p = m.predict(&x);
                Prediction::Ratings([p[0], p[1], p[2], p[3], p[4]])
            }
        })
    }
}

/// Predicted node probabilities with the object's observed hard labels
/// fixed (the root is always fixed at 1: everything is made of something),
/// projected onto the consistent set.
pub fn consistent_materials(o: &ObjectRecord, tax: &Taxonomy, raw: &[f64]) -> Result<Vec<f64>> {
    let mut state = observed_material_state(o, tax).unwrap_or_else(|| {
        let mut s = MaterialLabelState::unknown(tax.len());
        s.hard[tax.root()] = HardLabel::Positive;
        s.prob[tax.root()] = 1.0;
        s.fixed[tax.root()] = true;
        s
    });
    for v in 0..tax.len() {
        if !state.fixed[v] {
            state.prob[v] = raw[v];
        }
    }
    Ok(project_consistent(&state, tax)?.state.prob)
}

/// Greedy most-likely root-first path under a conditional prediction.
pub fn argmax_path(pred: &ConditionalPrediction, tax: &Taxonomy) -> Vec<String> {
    let mut path = vec![tax.id(tax.root()).to_string()];
    while let Some(children) = pred.get(path.last().unwrap()) {
        let Some((best, _)) = children.iter().max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0))) else {
            break;
        };
        path.push(best.clone());
    }
    path
}

/// Fills every missing attribute with its head's prediction. Observed values
/// are never overwritten; materials observed only at a coarse level get
/// synthetic probabilities for their open subtypes.
pub fn fill_missing(catalog: &Catalog, heads: &HeadSet, ctx: &ImputeContext<'_>) -> Result<Catalog> {
    let rows: Vec<usize> = (0..catalog.len()).collect();
    fill_rows(catalog, &rows, heads, ctx)
}

fn fill_rows(catalog: &Catalog, rows: &[usize], heads: &HeadSet, ctx: &ImputeContext<'_>) -> Result<Catalog> {
    let mut records = catalog.records().to_vec();
    for &r in rows {
        records[r] = fill_record(catalog.get(r), heads, ctx, None)?;
    }
    Catalog::with_slices(records, catalog.dim(), catalog.slices().clone())
}

/// `original` with every missing attribute set to its head's prediction.
/// With `mask`, that attribute is hidden from the heads' inputs and its own
/// synthetic value is left as it was.
fn fill_record(
    original: &ObjectRecord,
    heads: &HeadSet,
    ctx: &ImputeContext<'_>,
    mask: Option<Target>,
) -> Result<ObjectRecord> {
    let mut out = original.clone();
    for head in &heads.heads {
        if mask == Some(head.target) {
            continue;
        }
        let predict = || heads.predict_masked(head, original, ctx, mask);
        match head.target {
            Target::Price if original.price.is_none() => {
                if let Prediction::Value(v) = predict()? {
                    out.synthetic.price = Some(v);
                }
            }
            Target::Mass if original.mass_kg.is_none() => {
                if let Prediction::Value(v) = predict()? {
                    out.synthetic.mass_kg = Some(v);
                }
            }
            Target::Materials => {
                let tax = ctx.materials.unwrap();
                let observed = observed_material_state(original, tax);
                let open: Vec<usize> = match &observed {
                    Some(s) => (0..tax.len()).filter(|&v| !s.fixed[v]).collect(),
                    None => (0..tax.len()).collect(),
                };
                if open.is_empty() {
                    continue;
                }
                if let Prediction::Materials(p) = predict()? {
                    out.synthetic.materials = Some(open.iter().map(|&v| (tax.id(v).to_string(), p[v])).collect());
                }
            }
            Target::Category if original.category_path.is_none() => {
                if let Prediction::Category(p) = predict()? {
                    out.synthetic.category_path = Some(argmax_path(&p, ctx.categories.unwrap()));
                }
            }
            Target::Ratings if !observed_target_present(original, Target::Ratings) => {
                if let Prediction::Ratings(p) = predict()? {
                    out.synthetic.ratings = Some(p);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation and the EM loop

/// Held-out loss of one head over fully observed `rows`, in the head's own
/// loss (ALDE, masked BCE, hierarchical CE, review-weighted KL).
pub fn validation_loss(
    heads: &HeadSet,
    head: &AttributeHead,
    catalog: &Catalog,
    rows: &[usize],
    ctx: &ImputeContext<'_>,
) -> Result<Option<f64>> {
    let records: Vec<&ObjectRecord> = rows.iter().map(|&r| catalog.get(r)).collect();
    validation_loss_on(heads, head, &records, ctx)
}

fn validation_loss_on(
    heads: &HeadSet,
    head: &AttributeHead,
    records: &[&ObjectRecord],
    ctx: &ImputeContext<'_>,
) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    match head.target {
        Target::Price | Target::Mass => {
            let mut total = 0.0;
            for &o in records {
                let truth = match head.target {
                    Target::Price => o.price.unwrap().max(MIN_PRICE),
                    _ => o.mass_kg.unwrap(),
                };
                let Prediction::Value(p) = heads.predict(head, o, ctx)? else { unreachable!() };
                total += metrics::alde(p, truth)?;
            }
            Ok(Some(total / records.len() as f64))
        }
        Target::Materials => {
            let tax = ctx.materials.unwrap();
            let mut total = 0.0;
            for &o in records {
                let truth = observed_material_state(o, tax).unwrap();
                // Predict as if materials were missing.
                let mut blind = o.clone();
                blind.materials = None;
                blind.synthetic.materials = None;
                let Prediction::Materials(p) = heads.predict(head, &blind, ctx)? else { unreachable!() };
                total += masked_bce(&p, &truth);
            }
            Ok(Some(total / records.len() as f64))
        }
        Target::Category => {
            let tax = ctx.categories.unwrap();
            let weights = default_level_weights(tax.depth().max(1));
            let mut total = 0.0;
            let mut n = 0;
            for &o in records {
                let path = o.category_path.as_ref().unwrap();
                if path.len() < 2 {
                    continue;
                }
                let Prediction::Category(p) = heads.predict(head, o, ctx)? else { unreachable!() };
                total += hierarchical_ce(&p, path, &weights)?;
                n += 1;
            }
            Ok((n > 0).then(|| total / n as f64))
        }
        Target::Ratings => {
            let mut batch = Vec::with_capacity(records.len());
            for &o in records {
                let truth = RatingsDistribution::from_histogram(o.ratings_hist.unwrap()).unwrap();
                let Prediction::Ratings(p) = heads.predict(head, o, ctx)? else { unreachable!() };
                batch.push((truth, RatingsDistribution::new(p, 0)?));
            }
            Ok(metrics::weighted_mean_kl(&batch))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub target: Target,
    pub loss_weight: f64,
    /// Held-out loss per generation (`None` where the head was skipped).
    pub validation_loss: Vec<Option<f64>>,
    pub train_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub generations: u32,
    pub validation_rows: usize,
    pub heads: Vec<HeadReport>,
    /// Loss-weighted sum of head validation losses per generation.
    pub weighted_total: Vec<f64>,
    pub skipped: Vec<Vec<SkippedHead>>,
}

pub struct EmResult {
    pub catalog: Catalog,
    pub report: EmReport,
}

/// Seeded held-out split of fully observed objects.
pub fn validation_split(catalog: &Catalog, ctx: &ImputeContext<'_>, fraction: f64, seed: u64) -> Vec<usize> {
    let full: Vec<usize> = (0..catalog.len())
        .filter(|&r| fully_observed(catalog.get(r), ctx))
        .collect();
    let take = ((full.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut picked: Vec<usize> = index::sample(&mut rng::seeded(seed, "impute-validation"), full.len(), take)
        .into_iter()
        .map(|i| full[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Alternates fit / fill for `generations` rounds. Validation objects are
/// never fit on; they are fully observed, so filling leaves them unchanged.
pub fn run_em(catalog: &Catalog, ctx: &ImputeContext<'_>, generations: u32, config: &ImputeConfig) -> Result<EmResult> {
    if generations == 0 {
        return Err(invalid("generations must be at least 1"));
    }
    let validation = validation_split(catalog, ctx, config.validation_fraction, config.seed);
    let held: BTreeSet<usize> = validation.iter().copied().collect();
    let train: Vec<usize> = (0..catalog.len()).filter(|r| !held.contains(r)).collect();
    let targets = ctx.targets();
    let mut reports: Vec<HeadReport> = targets
        .iter()
        .map(|&t| HeadReport {
            target: t,
            loss_weight: config.weights.of(t),
            validation_loss: Vec::new(),
            train_rows: Vec::new(),
        })
        .collect();
    let mut weighted_total = Vec::new();
    let mut skipped = Vec::new();
    let mut current = catalog.clone();
    let mut previous: Option<HeadSet> = None;
    for g in 1..=generations {
        // Later generations keep refitting on observed plus synthetic values.
        let gen = g.min(2);
        let heads = fit_heads_refilled(&current, &train, ctx, gen, config, previous.as_ref())?;
        let mut total = 0.0;
        for rep in &mut reports {
            match heads.head(rep.target) {
                Some(h) => {
                    // Score on inputs built the way this head was trained:
                    // refilled by the previous heads with its own target hidden.
                    let refilled = match &previous {
                        Some(prev) => validation
                            .iter()
                            .map(|&r| fill_record(catalog.get(r), prev, ctx, Some(h.target)))
                            .collect::<Result<Vec<_>>>()?,
                        None => validation.iter().map(|&r| catalog.get(r).clone()).collect(),
                    };
                    let records: Vec<&ObjectRecord> = refilled.iter().collect();
                    let loss = validation_loss_on(&heads, h, &records, ctx)?;
                    if let Some(l) = loss {
                        total += h.loss_weight * l;
                    }
                    rep.validation_loss.push(loss);
                    rep.train_rows.push(h.train_rows);
                }
                None => {
                    rep.validation_loss.push(None);
                    rep.train_rows.push(0);
                }
            }
        }
        weighted_total.push(total);
        skipped.push(heads.skipped.clone());
        current = fill_rows(&current, &train, &heads, ctx)?;
        previous = Some(heads);
    }
    // Held-out rows are fully observed apart from open material subtypes,
    // which the final heads fill like any other open value.
    if let Some(heads) = &previous {
        current = fill_rows(&current, &validation, heads, ctx)?;
    }
    Ok(EmResult {
        catalog: current,
        report: EmReport {
            generations,
            validation_rows: validation.len(),
            heads: reports,
            weighted_total,
            skipped,
        },
    })
}
