//! Object embedding: a standardized concatenation of every attribute, squeezed
//! through a single-hidden-layer bottleneck autoencoder. The standardized
//! bottleneck activation is the embedding Smart Labeling trains on.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::{Catalog, Materials, ObjectRecord};
use crate::error::{invalid, Error, Result};
use crate::linmodel::Standardizer;
use crate::rng;
use crate::taxonomy::Taxonomy;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BOTTLENECK: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// What fills each slice of the input vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SliceSource {
    /// Columns `[start, start + len)` of the record's precomputed embedding.
    Embedding { start: usize },
    /// Natural log of the price.
    LogPrice,
    /// Natural log of the mass in kilograms.
    LogMass,
    /// Per-node material probabilities; `parents[i]` indexes into `nodes`.
    Materials { nodes: Vec<String>, parents: Vec<Option<usize>> },
    /// Star-rating distribution (5 values summing to one).
    Ratings,
    /// Multi-hot code of the category path.
    Category { nodes: Vec<String> },
}

/// Named, disjoint slices covering `[0, total_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub slices: Vec<Slice>,
    pub sources: Vec<SliceSource>,
    pub total_dim: usize,
}

impl FeatureLayout {
    pub fn new(parts: Vec<(String, usize, SliceSource)>) -> Result<Self> {
        let mut slices = Vec::with_capacity(parts.len());
        let mut sources = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (name, len, source) in parts {
            if len == 0 {
                return Err(invalid(format!("slice {name:?} has length 0")));
            }
            if slices.iter().any(|s: &Slice| s.name == name) {
                return Err(invalid(format!("duplicate slice {name:?}")));
            }
            slices.push(Slice { name, offset, len });
            sources.push(source);
            offset += len;
        }
        if slices.is_empty() {
            return Err(invalid("layout needs at least one slice"));
        }
        Ok(Self {
            slices,
            sources,
            total_dim: offset,
        })
    }

    /// Layout over the catalog's embedding slices plus price, mass, ratings,
    /// and (when taxonomies are given) materials and category codes.
    pub fn for_catalog(catalog: &Catalog, materials: Option<&Taxonomy>, categories: Option<&Taxonomy>) -> Result<Self> {
        let s = catalog.slices();
        let mut parts = Vec::new();
        if s.text == s.image {
            parts.push(("embedding".to_string(), s.text.len(), SliceSource::Embedding { start: s.text.start }));
        } else {
            for (name, r) in [("text_embedding", &s.text), ("image_embedding", &s.image)] {
                if !r.is_empty() {
                    parts.push((name.to_string(), r.len(), SliceSource::Embedding { start: r.start }));
                }
            }
        }
        parts.push(("price".into(), 1, SliceSource::LogPrice));
        parts.push(("mass".into(), 1, SliceSource::LogMass));
        if let Some(t) = materials {
            let nodes = t.nodes().iter().map(|n| n.id.clone()).collect();
            let parents = (0..t.len()).map(|i| t.parent(i)).collect();
            parts.push(("materials".into(), t.len(), SliceSource::Materials { nodes, parents }));
        }
        parts.push(("ratings".into(), 5, SliceSource::Ratings));
        if let Some(t) = categories {
            let nodes = t.nodes().iter().map(|n| n.id.clone()).collect();
            parts.push(("category".into(), t.len(), SliceSource::Category { nodes }));
        }
        Self::new(parts)
    }

    pub fn slice(&self, name: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// Unstandardized input vector; observed values take precedence over
/// synthetic ones. A slice with neither is a failed precondition naming it.
pub fn raw_input_vector(object: &ObjectRecord, layout: &FeatureLayout) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(layout.total_dim);
    for (slice, source) in layout.slices.iter().zip(&layout.sources) {
        let missing = || Error::FailedPrecondition(slice.name.clone());
        match source {
            SliceSource::Embedding { start } => {
                let v = object.embedding.get(*start..start + slice.len).ok_or_else(|| {
                    invalid(format!("object {:?} embedding too short for slice {:?}", object.id, slice.name))
                })?;
                out.extend_from_slice(v);
            }
            SliceSource::LogPrice => {
                let p = object.price.or(object.synthetic.price).ok_or_else(missing)?;
                // Free items exist; keep the log finite.
                out.push(p.max(1e-2).ln());
            }
            SliceSource::LogMass => {
                let m = object.mass_kg.or(object.synthetic.mass_kg).ok_or_else(missing)?;
                out.push(m.ln());
            }
            SliceSource::Materials { nodes, parents } => {
                let probs = material_vector(object, nodes, parents).ok_or_else(missing)?;
                out.extend(probs);
            }
            SliceSource::Ratings => {
                let r = ratings_vector(object).ok_or_else(missing)?;
                out.extend_from_slice(&r);
            }
            SliceSource::Category { nodes } => {
                let path = object
                    .category_path
                    .as_ref()
                    .or(object.synthetic.category_path.as_ref())
                    .ok_or_else(missing)?;
                out.extend(nodes.iter().map(|n| f64::from(u8::from(path.contains(n)))));
            }
        }
    }
    Ok(out)
}

/// Per-node material probabilities: observed values, overlaid with any
/// synthetic values for the nodes the listing left open.
pub fn material_vector(object: &ObjectRecord, nodes: &[String], parents: &[Option<usize>]) -> Option<Vec<f64>> {
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let synthetic = object.synthetic.materials.as_ref();
    if object.materials.is_none() && synthetic.is_none() {
        return None;
    }
    let mut v = vec![0.0; nodes.len()];
    match &object.materials {
        Some(Materials::Probabilities(m)) => {
            for (id, &p) in m {
                if let Some(&i) = index.get(id.as_str()) {
                    v[i] = p;
                }
            }
        }
        Some(Materials::Names(names)) => {
            for name in names {
                let mut cur = index.get(name.as_str()).copied();
                while let Some(i) = cur {
                    v[i] = 1.0;
                    cur = parents[i];
                }
            }
        }
        None => {}
    }
    for (id, &p) in synthetic.into_iter().flatten() {
        if let Some(&i) = index.get(id.as_str()) {
            v[i] = p;
        }
    }
    Some(v)
}

/// Observed star-rating distribution, else the synthetic one.
pub fn ratings_vector(object: &ObjectRecord) -> Option<[f64; 5]> {
    if let Some(h) = object.ratings_hist {
        let n: u64 = h.iter().sum();
        if n > 0 {
            return Some(h.map(|c| c as f64 / n as f64));
        }
    }
    object.synthetic.ratings
}

/// Standardized input vector.
pub fn build_input_vector(object: &ObjectRecord, layout: &FeatureLayout, standardizer: &Standardizer) -> Result<Vec<f64>> {
    if standardizer.dim() != layout.total_dim {
        return Err(invalid(format!(
            "standardizer has {} dimensions, layout {}",
            standardizer.dim(),
            layout.total_dim
        )));
    }
    Ok(standardizer.transform(&raw_input_vector(object, layout)?))
}

/// Fits the per-column standardizer over the catalog and returns every
/// standardized input vector.
pub fn build_input_matrix(catalog: &Catalog, layout: &FeatureLayout) -> Result<(Standardizer, Vec<Vec<f64>>)> {
    let raw = catalog
        .records()
        .iter()
        .map(|o| raw_input_vector(o, layout))
        .collect::<Result<Vec<_>>>()?;
    let standardizer = Standardizer::fit(&raw)?;
    let vectors = raw.iter().map(|r| standardizer.transform(r)).collect();
    Ok((standardizer, vectors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activation {
    Linear,
    /// tanh
    SmoothSaturating,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Linear => a,
            Activation::SmoothSaturating => a.tanh(),
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn slope(self, h: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::SmoothSaturating => 1.0 - h * h,
        }
    }
}

/// Encoder `h = act(We x + be)`, linear decoder `x̂ = Wd h + bd`, all
/// parameters in one flat vector: `[We (k×d), be (k), Wd (d×k), bd (d)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderNet {
    pub input_dim: usize,
    pub bottleneck_dim: usize,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl AutoencoderNet {
    pub fn n_params(d: usize, k: usize) -> usize {
        2 * d * k + k + d
    }

    /// Gaussian weights with variance 1/fan_in, zero biases.
    pub fn init(d: usize, k: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut params = vec![0.0; Self::n_params(d, k)];
        let (we, rest) = params.split_at_mut(d * k);
        let wd = &mut rest[k..k + d * k];
        let se = 1.0 / (d as f64).sqrt();
        let sd = 1.0 / (k as f64).sqrt();
        for w in we.iter_mut() {
            *w = se * rng.sample::<f64, _>(StandardNormal);
        }
        for w in wd.iter_mut() {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        Self {
            input_dim: d,
            bottleneck_dim: k,
            activation,
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (d, k) = (self.input_dim, self.bottleneck_dim);
        (d * k, d * k + k, 2 * d * k + k)
    }

    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.input_dim, self.bottleneck_dim);
        let (be, _, _) = self.offsets();
        (0..k)
            .map(|j| {
                let row = &self.params[j * d..(j + 1) * d];
                let a = self.params[be + j] + dot(row, x);
                self.activation.apply(a)
            })
            .collect()
    }

    fn decode_into(&self, h: &[f64], out: &mut [f64]) {
        let (d, k) = (self.input_dim, self.bottleneck_dim);
        let (_, wd, bd) = self.offsets();
        for i in 0..d {
            out[i] = self.params[bd + i] + dot(&self.params[wd + i * k..wd + (i + 1) * k], h);
        }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim];
        self.decode_into(&self.hidden(x), &mut out);
        out
    }

    /// Mean squared reconstruction error over samples and features.
    pub fn loss<R: AsRef<[f64]>>(&self, batch: &[R]) -> f64 {
        let mut out = vec![0.0; self.input_dim];
        let mut total = 0.0;
        for x in batch {
            let x = x.as_ref();
            self.decode_into(&self.hidden(x), &mut out);
            total += out.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total / (batch.len() * self.input_dim) as f64
    }

    pub fn loss_and_gradient<R: AsRef<[f64]>>(&self, batch: &[R]) -> (f64, Vec<f64>) {
        let (d, k) = (self.input_dim, self.bottleneck_dim);
        let (be, wd, bd) = self.offsets();
        let scale = 2.0 / (batch.len() * d) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut out = vec![0.0; d];
        let mut r = vec![0.0; d];
        let mut total = 0.0;
        for x in batch {
            let x = x.as_ref();
            let h = self.hidden(x);
            self.decode_into(&h, &mut out);
            for i in 0..d {
                r[i] = out[i] - x[i];
                total += r[i] * r[i];
            }
            for i in 0..d {
                let ri = scale * r[i];
                grad[bd + i] += ri;
                let g = &mut grad[wd + i * k..wd + (i + 1) * k];
                for j in 0..k {
                    g[j] += ri * h[j];
                }
            }
            for j in 0..k {
                let mut dh = 0.0;
                for i in 0..d {
                    dh += self.params[wd + i * k + j] * r[i];
                }
                let da = scale * dh * self.activation.slope(h[j]);
                grad[be + j] += da;
                let g = &mut grad[j * d..(j + 1) * d];
                for i in 0..d {
                    g[i] += da * x[i];
                }
            }
        }
        (total / (batch.len() * d) as f64, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the first epoch, decayed geometrically to `lr_end`
    /// at the last (3e-3 → 3e-7 over 50 epochs halves about every 4).
    pub lr_start: f64,
    pub lr_end: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            epochs: 50,
            lr_start: 3e-3,
            lr_end: 3e-7,
            activation: Activation::Linear,
            seed: crate::datastore::DEFAULT_SEED,
        }
    }
}

impl AutoencoderConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// Layout and input standardizer, so whole objects can be encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub layout: FeatureLayout,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub format_version: u32,
    pub net: AutoencoderNet,
    /// Standardizes bottleneck activations over the training vectors.
    pub output_standardizer: Standardizer,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
    pub config: AutoencoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
}

/// Adam over shuffled minibatches with the configured learning-rate decay.
pub fn train_autoencoder<R: AsRef<[f64]>>(
    vectors: &[R],
    bottleneck_dim: usize,
    config: &AutoencoderConfig,
) -> Result<AutoencoderModel> {
    if bottleneck_dim == 0 {
        return Err(invalid("bottleneck_dim must be at least 1"));
    }
    if vectors.len() < 2 * bottleneck_dim {
        return Err(invalid(format!(
            "need at least {} vectors for bottleneck {bottleneck_dim}, got {}",
            2 * bottleneck_dim,
            vectors.len()
        )));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(invalid("batch_size and epochs must be at least 1"));
    }
    let d = vectors[0].as_ref().len();
    if d == 0 || vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(invalid("vectors must share one nonzero dimension"));
    }
    let mut rng = rng::seeded(config.seed, "autoencoder");
    let mut net = AutoencoderNet::init(d, bottleneck_dim, config.activation, &mut rng);
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; net.params.len()];
    let mut v = vec![0.0; net.params.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| vectors[i].as_ref()));
            let (loss, grad) = net.loss_and_gradient(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailure { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for (((p, g), mi), vi) in net.params.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        history.push(epoch_loss / vectors.len() as f64);
    }
    let final_loss = net.loss(vectors);
    if !final_loss.is_finite() {
        return Err(Error::TrainingFailure { epoch: config.epochs });
    }
    let hidden: Vec<Vec<f64>> = vectors.iter().map(|x| net.hidden(x.as_ref())).collect();
    let output_standardizer = Standardizer::fit(&hidden)?;
    Ok(AutoencoderModel {
        format_version: MODEL_FORMAT_VERSION,
        net,
        output_standardizer,
        final_loss,
        loss_history: history,
        config: *config,
        input: None,
    })
}

/// Builds standardized vectors for the whole catalog and trains on them;
/// the returned model can encode records directly.
pub fn train_on_catalog(
    catalog: &Catalog,
    layout: FeatureLayout,
    bottleneck_dim: usize,
    config: &AutoencoderConfig,
) -> Result<AutoencoderModel> {
    let (standardizer, vectors) = build_input_matrix(catalog, &layout)?;
    let mut model = train_autoencoder(&vectors, bottleneck_dim, config)?;
    model.input = Some(InputSpec { layout, standardizer });
    Ok(model)
}

impl AutoencoderModel {
    pub fn bottleneck_dim(&self) -> usize {
        self.net.bottleneck_dim
    }

    /// Per-feature RMS reconstruction error in standard-deviation units.
    pub fn rms(&self) -> f64 {
        rms_from_loss(self.final_loss)
    }

    /// Standardized bottleneck activation of an already standardized input.
    pub fn encode_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.input_dim {
            return Err(invalid(format!(
                "input has {} dimensions, model expects {}",
                x.len(),
                self.net.input_dim
            )));
        }
        Ok(self.output_standardizer.transform(&self.net.hidden(x)))
    }

    pub fn encode(&self, object: &ObjectRecord) -> Result<Vec<f64>> {
        let spec = self
            .input
            .as_ref()
            .ok_or_else(|| invalid("model carries no input layout; encode standardized vectors instead"))?;
        if spec.layout.total_dim != self.net.input_dim {
            return Err(invalid("layout and model dimensions differ"));
        }
        self.encode_vector(&build_input_vector(object, &spec.layout, &spec.standardizer)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(invalid(format!("unsupported model format {}", model.format_version)));
        }
        Ok(model)
    }
}

pub fn rms_from_loss(loss: f64) -> f64 {
    loss.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub avg_standardized_l2: f64,
    pub per_slice_l2: Vec<(String, f64)>,
    pub rms: f64,
}

/// Mean squared error overall and per slice; the slice values, weighted by
/// slice length, average to the overall value.
pub fn reconstruction_report<R: AsRef<[f64]>>(
    model: &AutoencoderModel,
    vectors: &[R],
    layout: &FeatureLayout,
) -> Result<ReconstructionReport> {
    if layout.total_dim != model.net.input_dim {
        return Err(invalid("layout and model dimensions differ"));
    }
    let d = layout.total_dim;
    let mut col = vec![0.0; d];
    for x in vectors {
        let x = x.as_ref();
        if x.len() != d {
            return Err(invalid("vector dimension differs from layout"));
        }
        for (c, (a, b)) in col.iter_mut().zip(model.net.reconstruct(x).iter().zip(x)) {
            *c += (a - b) * (a - b);
        }
    }
    let n = vectors.len().max(1) as f64;
    let per_slice_l2 = layout
        .slices
        .iter()
        .map(|s| (s.name.clone(), col[s.offset..s.offset + s.len].iter().sum::<f64>() / (n * s.len as f64)))
        .collect();
    let avg = col.iter().sum::<f64>() / (n * d as f64);
    Ok(ReconstructionReport {
        avg_standardized_l2: avg,
        per_slice_l2,
        rms: rms_from_loss(avg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_slices() -> FeatureLayout {
        FeatureLayout::new(vec![
            ("a".into(), 2, SliceSource::Embedding { start: 0 }),
            ("b".into(), 2, SliceSource::Embedding { start: 2 }),
        ])
        .unwrap()
    }

    #[test]
    fn layout_slices_are_contiguous() {
        let l = two_slices();
        assert_eq!(l.total_dim, 4);
        assert_eq!(l.slice("b").unwrap().offset, 2);
        let o = ObjectRecord::new("x", "t", vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(raw_input_vector(&o, &l).unwrap().len(), 4);
    }

    #[test]
    fn missing_price_names_the_slice() {
        let l = FeatureLayout::new(vec![("price".into(), 1, SliceSource::LogPrice)]).unwrap();
        let o = ObjectRecord::new("x", "t", vec![]);
        match raw_input_vector(&o, &l) {
            Err(Error::FailedPrecondition(s)) => assert_eq!(s, "price"),
            other => panic!("{other:?}"),
        }
        let mut o = o;
        o.synthetic.price = Some(std::f64::consts::E);
        assert!((raw_input_vector(&o, &l).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn material_names_set_ancestors() {
        let nodes: Vec<String> = ["root", "metal", "steel"].iter().map(|s| s.to_string()).collect();
        let parents = vec![None, Some(0), Some(1)];
        let mut o = ObjectRecord::new("x", "t", vec![]);
        o.materials = Some(Materials::Names(vec!["steel".into()]));
        assert_eq!(material_vector(&o, &nodes, &parents).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn learning_rate_schedule_endpoints() {
        let c = AutoencoderConfig::default();
        assert!((c.learning_rate(0) - 3e-3).abs() < 1e-15);
        assert!((c.learning_rate(49) - 3e-7).abs() < 1e-18);
        // ~halving every 4 epochs
        let ratio = c.learning_rate(4) / c.learning_rate(0);
        assert!((0.4..0.55).contains(&ratio), "{ratio}");
    }

    #[test]
    fn rms_relation() {
        assert!((rms_from_loss(0.0054) - 0.0735).abs() < 5e-5);
    }

    #[test]
    fn too_few_vectors_rejected() {
        let v = vec![vec![0.0, 1.0]; 3];
        assert!(train_autoencoder(&v, 2, &AutoencoderConfig::default()).is_err());
    }

    #[test]
    fn perfect_reconstruction_reports_zero() {
        let mut net = AutoencoderNet::init(2, 2, Activation::Linear, &mut rng::seeded(1, "t"));
        // We = I, Wd = I, biases 0.
        net.params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let model = AutoencoderModel {
            format_version: MODEL_FORMAT_VERSION,
            net,
            output_standardizer: Standardizer::identity(2),
            final_loss: 0.0,
            loss_history: vec![],
            config: AutoencoderConfig::default(),
            input: None,
        };
        let l = FeatureLayout::new(vec![
            ("a".into(), 1, SliceSource::Embedding { start: 0 }),
            ("b".into(), 1, SliceSource::Embedding { start: 1 }),
        ])
        .unwrap();
        let r = reconstruction_report(&model, &[vec![1.0, 2.0], vec![-3.0, 0.5]], &l).unwrap();
        assert_eq!(r.avg_standardized_l2, 0.0);
        assert!(r.per_slice_l2.iter().all(|(_, v)| *v == 0.0));
    }
}
