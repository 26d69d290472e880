//! Synthetic catalogs with a hidden ground truth and a simulated annotator,
//! so the whole labeling protocol can be replayed without humans.
//!
//! Embeddings are standard normal. A hidden unit direction `w` and a
//! threshold `t` (set at the `1 - prevalence` quantile of `w·x`) define the
//! true score `sigmoid(steepness · (w·x - t))`; an object is truly positive
//! when that score is at least 0.5. Each object also carries a fixed noise
//! flip, so asking the oracle twice gives the same answer.

mod attributes;

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::{Catalog, LabelMode, LabelValue, ObjectRecord, Project};
use crate::engine::{EngineContext, LabelInput, Session};
use crate::error::{invalid, Error, Result};
use crate::linmodel::{sigmoid, DEFAULT_FOLDS, DEFAULT_LAMBDA};
use crate::metrics::{binary_prf, BinaryScores, Confusion};
use crate::rng;

pub use attributes::{
    attribute_catalog, hide_mcar, sample_category_taxonomy, sample_material_taxonomy, AttributeSpec,
    AttributeWorld,
};

/// Filler vocabulary for synthesized listing text.
const FILLER: &[&str] = &[
    "steel", "wooden", "handmade", "blue", "large", "compact", "set", "kitchen", "garden", "storage", "premium",
    "classic", "travel", "outdoor", "home", "office", "durable", "vintage", "modern", "portable", "soft", "round",
    "heavy", "light", "green", "black", "white", "cotton", "plastic", "glass", "ceramic", "leather", "mini",
    "deluxe", "pack", "holder", "cover", "stand", "tray", "lamp",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_objects: usize,
    pub embedding_dim: usize,
    /// Target share of truly positive objects.
    pub prevalence: f64,
    /// Probability the oracle's answer for an object is flipped.
    pub label_noise: f64,
    /// The oracle skips objects whose true score is within this of 0.5.
    pub abstain_band: f64,
    /// Probability a positive object's text contains the seed keyword.
    pub keyword_correlation: f64,
    /// Probability a negative object's text contains the seed keyword.
    pub keyword_false_rate: f64,
    /// Slope of the true score in units of the hidden margin.
    pub steepness: f64,
    /// Uniformly sampled objects held out for evaluation.
    pub test_size: usize,
    pub keyword: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_objects: 100_000,
            embedding_dim: 64,
            prevalence: 0.02,
            label_noise: 0.02,
            abstain_band: 0.05,
            keyword_correlation: 0.5,
            keyword_false_rate: 0.005,
            steepness: 4.0,
            test_size: 10_000,
            keyword: "sharp".into(),
            seed: crate::datastore::DEFAULT_SEED,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("prevalence", self.prevalence),
            ("label_noise", self.label_noise),
            ("abstain_band", self.abstain_band),
            ("keyword_correlation", self.keyword_correlation),
            ("keyword_false_rate", self.keyword_false_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.n_objects < 100 {
            return Err(invalid(format!("n_objects must be at least 100, got {}", self.n_objects)));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim must be at least 1"));
        }
        if self.test_size >= self.n_objects {
            return Err(invalid("test_size must leave objects to label"));
        }
        if !(self.steepness > 0.0) {
            return Err(invalid("steepness must be positive"));
        }
        if self.keyword.trim().is_empty() {
            return Err(invalid("keyword must be nonempty"));
        }
        Ok(())
    }
}

/// Hidden truth for every generated object, indexed like the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `sigmoid(steepness · (w·x - t))`.
    pub score: Vec<f64>,
    pub positive: Vec<bool>,
    /// Fixed per-object oracle flips.
    pub flip: Vec<bool>,
    pub direction: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    pub catalog: Catalog,
    pub truth: Truth,
}

impl SyntheticWorld {
    pub fn realized_prevalence(&self) -> f64 {
        self.truth.positive.iter().filter(|&&p| p).count() as f64 / self.truth.positive.len() as f64
    }

    pub fn oracle(&self, row: usize) -> OracleAnswer {
        oracle_label(self.truth.score[row], self.truth.flip[row], self.spec.abstain_band)
    }

    /// Uniform held-out rows (sorted) and the remaining labeling pool.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.catalog.len();
        let mut test: Vec<usize> =
            index::sample(&mut rng::seeded(self.spec.seed, "sim-test"), n, self.spec.test_size).into_vec();
        test.sort_unstable();
        let held: BTreeSet<usize> = test.iter().copied().collect();
        let pool = (0..n).filter(|r| !held.contains(r)).collect();
        (test, pool)
    }
}

pub fn generate_catalog(spec: &SyntheticSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let n = spec.n_objects;
    let d = spec.embedding_dim;
    let mut rng = rng::seeded(spec.seed, "sim-catalog");
    let mut direction: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let embeddings: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let margins: Vec<f64> = embeddings
        .iter()
        .map(|e| e.iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((1.0 - spec.prevalence) * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Err(invalid(format!(
            "prevalence {} leaves a single class on {n} objects",
            spec.prevalence
        )));
    }
    // Midway between the last negative and first positive margin.
    let threshold = 0.5 * (sorted[k - 1] + sorted[k]);
    let score: Vec<f64> = margins.iter().map(|m| sigmoid(spec.steepness * (m - threshold))).collect();
    let positive: Vec<bool> = margins.iter().map(|&m| m >= threshold).collect();

    let mut text_rng = rng::seeded(spec.seed, "sim-text");
    let mut flip_rng = rng::seeded(spec.seed, "sim-noise");
    let flip: Vec<bool> = (0..n).map(|_| flip_rng.random_bool(spec.label_noise)).collect();
    let records = embeddings
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let p_kw = if positive[i] {
                spec.keyword_correlation
            } else {
                spec.keyword_false_rate
            };
            let has_kw = text_rng.random_bool(p_kw);
            let mut words: Vec<&str> = (0..6).map(|_| FILLER[text_rng.random_range(0..FILLER.len())]).collect();
            if has_kw {
                let at = text_rng.random_range(0..=words.len());
                words.insert(at, spec.keyword.as_str());
            }
            let title = words[..3].join(" ");
            let text = format!("{title}\n{}", words[3..].join(" "));
            let mut r = ObjectRecord::new(format!("obj{i:06}"), text, e);
            r.title = title;
            r
        })
        .collect();
    Ok(SyntheticWorld {
        spec: spec.clone(),
        catalog: Catalog::from_records(records, d)?,
        truth: Truth {
            score,
            positive,
            flip,
            direction,
            threshold,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleAnswer {
    Positive,
    Negative,
    Skip,
}

impl OracleAnswer {
    pub fn label_value(self) -> Option<LabelValue> {
        match self {
            OracleAnswer::Positive => Some(LabelValue::Positive),
            OracleAnswer::Negative => Some(LabelValue::Negative),
            OracleAnswer::Skip => None,
        }
    }
}

/// Skip when the true score is within `abstain_band` of 0.5, otherwise the
/// (possibly flipped) truth.
pub fn oracle_label(true_score: f64, flipped: bool, abstain_band: f64) -> OracleAnswer {
    if (true_score - 0.5).abs() < abstain_band {
        return OracleAnswer::Skip;
    }
    if (true_score >= 0.5) != flipped {
        OracleAnswer::Positive
    } else {
        OracleAnswer::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Smart,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smart" => Ok(Strategy::Smart),
            "random" => Ok(Strategy::Random),
            _ => Err(invalid(format!("unknown strategy {s:?} (expected smart or random)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub page_size: usize,
    pub pool_size: usize,
    /// Word-search seeding targets.
    pub seed_positives: usize,
    pub seed_negatives: usize,
    pub lambda: f64,
    /// Pages spent in each correction range and in review at the end.
    pub correction_pages: usize,
    pub review_pages: usize,
    pub review_folds: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            page_size: crate::engine::DEFAULT_PAGE_SIZE,
            pool_size: crate::engine::DEFAULT_POOL_SIZE,
            seed_positives: 50,
            seed_negatives: 50,
            lambda: DEFAULT_LAMBDA,
            correction_pages: 1,
            review_pages: 1,
            review_folds: DEFAULT_FOLDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seed,
    Active,
    CorrectionHigh,
    CorrectionLow,
    Review,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Oracle queries so far, skips included.
    pub labels_used: usize,
    pub labeled_pos: usize,
    pub labeled_neg: usize,
    pub phase: Phase,
    pub model_version: u64,
    pub scores: BinaryScores,
    pub confusion: Confusion,
}

impl CurvePoint {
    /// F1 with an undefined value (no predicted or true positives) as 0.
    pub fn f1(&self) -> f64 {
        self.scores.f1.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    pub test_size: usize,
    pub test_positives: usize,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// The last checkpoint with at most `labels` oracle queries.
    pub fn at_budget(&self, labels: usize) -> Option<&CurvePoint> {
        self.points.iter().rev().find(|p| p.labels_used <= labels)
    }
}

/// Evaluation rows and their noiseless labels, skipping objects the oracle
/// would abstain on.
struct TestSet {
    rows: Vec<usize>,
    truth: Vec<bool>,
    design: Vec<f64>,
    dim: usize,
}

struct Run<'w> {
    world: &'w SyntheticWorld,
    session: Session,
    /// Map from session catalog rows to world rows.
    world_row: Vec<usize>,
    used: usize,
    budget: usize,
    clock: i64,
    curve: Vec<CurvePoint>,
    test: TestSet,
    page_size: usize,
}

impl Run<'_> {
    fn now(&mut self) -> DateTime<Utc> {
        self.clock += 1;
        DateTime::<Utc>::UNIX_EPOCH + TimeDelta::seconds(self.clock)
    }

    fn remaining(&self) -> usize {
        self.budget.saturating_sub(self.used)
    }

    /// Queries the oracle for session rows, up to the remaining budget.
    fn ask(&mut self, rows: &[usize], mode: LabelMode) -> Vec<LabelInput> {
        let mut out = Vec::new();
        let mut skipped = Vec::new();
        for &r in rows {
            if self.remaining() == 0 {
                break;
            }
            self.used += 1;
            let id = self.session.catalog().get(r).id.clone();
            match self.world.oracle(self.world_row[r]).label_value() {
                Some(v) => out.push(LabelInput::new(id, v, mode)),
                None => skipped.push(id),
            }
        }
        self.session.mark_skipped(skipped);
        out
    }

    fn advance(&mut self, labels: &[LabelInput], phase: Phase) -> Result<()> {
        let now = self.now();
        self.session.advance_and_retrain(labels, now)?;
        self.checkpoint(phase);
        Ok(())
    }

    fn checkpoint(&mut self, phase: Phase) {
        let c = self.session.labeled_counts();
        let pred = self.predict_test();
        let confusion = Confusion::from_predictions(&pred, &self.test.truth);
        self.curve.push(CurvePoint {
            labels_used: self.used,
            labeled_pos: c.positive,
            labeled_neg: c.negative,
            phase,
            model_version: self.session.project.model_version,
            scores: binary_prf(confusion.tp, confusion.fp, confusion.fn_, confusion.tn),
            confusion,
        });
    }

    /// Predictions at 0.5; everything negative before a model exists.
    fn predict_test(&mut self) -> Vec<bool> {
        let Some(model) = self.session.project.model.as_ref() else {
            return vec![false; self.test.rows.len()];
        };
        let features = &self.session.project.features;
        let d = self.test.dim;
        self.test
            .rows
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let text = self.world.catalog.lower_text(r);
                let bits = features.bits_lower(text);
                model.predict_parts(&self.test.design[k * d..(k + 1) * d], &bits) >= 0.5
            })
            .collect()
    }

    fn labeled_ids(&self) -> BTreeSet<String> {
        self.session.project.log.current().keys().cloned().collect()
    }

    /// Labels seeded-random unlabeled rows, one page at a time.
    fn random_pages(&mut self, until: impl Fn(&Self) -> bool, phase: Phase, mode: LabelMode, tag: &str) -> Result<()> {
        let mut order = self.session.unlabeled_rows();
        order.shuffle(&mut rng::seeded(self.world.spec.seed, tag));
        let mut cursor = 0;
        let page_size = self.page_size;
        while !until(self) && self.remaining() > 0 && cursor < order.len() {
            let labeled = self.labeled_ids();
            let mut page = Vec::with_capacity(page_size);
            while page.len() < page_size && cursor < order.len() {
                let r = order[cursor];
                cursor += 1;
                if !labeled.contains(&self.session.catalog().get(r).id) {
                    page.push(r);
                }
            }
            let labels = self.ask(&page, mode);
            if phase == Phase::Seed {
                // Seeding is checkpointed once, when it is complete.
                let now = self.now();
                self.session.advance_and_retrain(&labels, now)?;
            } else {
                self.advance(&labels, phase)?;
            }
        }
        Ok(())
    }
}

/// Runs one labeling strategy against the oracle and returns the learning
/// curve on the uniform held-out test set. The budget counts every oracle
/// query, including skips and review re-checks.
pub fn run_protocol(world: &SyntheticWorld, budget: usize, strategy: Strategy, config: &ProtocolConfig) -> Result<LearningCurve> {
    if budget < 100 {
        return Err(invalid(format!("budget must be at least 100, got {budget}")));
    }
    if config.page_size == 0 || config.pool_size == 0 {
        return Err(invalid("page_size and pool_size must be at least 1"));
    }
    let spec = &world.spec;
    let (test_rows, pool_rows) = world.split();
    let pool_records: Vec<ObjectRecord> = pool_rows.iter().map(|&r| world.catalog.get(r).clone()).collect();
    let pool_catalog = Arc::new(Catalog::from_records(pool_records, world.catalog.dim())?);
    let ctx = Arc::new(EngineContext::new(pool_catalog)?);

    let mut test = TestSet {
        rows: Vec::new(),
        truth: Vec::new(),
        design: Vec::new(),
        dim: world.catalog.dim(),
    };
    for &r in &test_rows {
        if (world.truth.score[r] - 0.5).abs() < spec.abstain_band {
            continue;
        }
        test.rows.push(r);
        test.truth.push(world.truth.positive[r]);
        ctx.standardizer().transform_into(&world.catalog.get(r).embedding, &mut test.design);
    }

    let mut project = Project::in_memory("sim", spec.seed)?;
    project.set_lambda(config.lambda)?;
    let session = Session::new(project, ctx).with_pool_size(config.pool_size);
    let mut run = Run {
        world,
        session,
        world_row: pool_rows,
        used: 0,
        budget,
        clock: 0,
        curve: Vec::new(),
        test,
        page_size: config.page_size,
    };

    match strategy {
        Strategy::Smart => smart(&mut run, config)?,
        Strategy::Random => {
            run.random_pages(|r| r.remaining() == 0, Phase::Random, LabelMode::Active, "sim-random")?;
            if run.curve.is_empty() {
                run.checkpoint(Phase::Random);
            }
        }
    }
    let test_positives = run.test.truth.iter().filter(|&&t| t).count();
    Ok(LearningCurve {
        strategy,
        budget,
        seed: spec.seed,
        test_size: run.test.rows.len(),
        test_positives,
        points: run.curve,
    })
}

fn smart(run: &mut Run<'_>, config: &ProtocolConfig) -> Result<()> {
    let keyword = run.world.spec.keyword.clone();
    let mut features = run.session.project.features.clone();
    features.push(&keyword)?;
    run.session.set_features(features);

    // Word search for the property's keyword until enough positives.
    let page_size = config.page_size;
    let mut page = 0;
    loop {
        let c = run.session.labeled_counts();
        if c.positive >= config.seed_positives || run.remaining() == 0 {
            break;
        }
        let found = run.session.search_page(&keyword, page, page_size)?;
        if found.items.is_empty() {
            break;
        }
        let rows: Vec<usize> = found
            .items
            .iter()
            .filter(|i| i.label.is_none() && !run.session.skipped().contains(&i.object_id))
            .filter_map(|i| run.session.catalog().index_of(&i.object_id))
            .collect();
        let labels = run.ask(&rows, LabelMode::WordSearch);
        let now = run.now();
        run.session.advance_and_retrain(&labels, now)?;
        page += 1;
    }
    // Browsing unrelated listings supplies negatives.
    let seed_negatives = config.seed_negatives;
    run.random_pages(
        |r| r.session.labeled_counts().negative >= seed_negatives,
        Phase::Seed,
        LabelMode::WordSearch,
        "sim-seed-negatives",
    )?;
    run.checkpoint(Phase::Seed);

    let reserve = (2 * config.correction_pages + config.review_pages) * page_size;
    let reserve = if run.budget >= reserve + 4 * page_size { reserve } else { 0 };

    // Uncertainty sampling until only the reserve is left.
    while run.remaining() > reserve {
        let c = run.session.labeled_counts();
        if c.positive == 0 || c.negative == 0 {
            // Seeding failed to find both classes: keep browsing.
            run.random_pages(
                |r| {
                    let c = r.session.labeled_counts();
                    (c.positive > 0 && c.negative > 0) || r.remaining() <= reserve
                },
                Phase::Seed,
                LabelMode::WordSearch,
                "sim-seed-fallback",
            )?;
            continue;
        }
        let take = page_size.min(run.remaining() - reserve);
        let page = run.session.next_uncertain_page(config.pool_size, take)?;
        if page.items.is_empty() {
            break;
        }
        let rows: Vec<usize> = page
            .items
            .iter()
            .filter_map(|i| run.session.catalog().index_of(&i.object_id))
            .collect();
        let labels = run.ask(&rows, LabelMode::Active);
        run.advance(&labels, Phase::Active)?;
    }

    if run.session.project.model.is_none() {
        return Ok(());
    }
    for (lo, hi, phase) in [(0.5, 1.0, Phase::CorrectionHigh), (0.1, 0.5, Phase::CorrectionLow)] {
        for _ in 0..config.correction_pages {
            if run.remaining() == 0 {
                return Ok(());
            }
            let page = run.session.range_page(lo, hi, page_size.min(run.remaining()))?;
            if page.items.is_empty() {
                break;
            }
            let rows: Vec<usize> = page
                .items
                .iter()
                .filter_map(|i| run.session.catalog().index_of(&i.object_id))
                .collect();
            let labels = run.ask(&rows, LabelMode::Correction);
            run.advance(&labels, phase)?;
        }
    }

    // Review: re-examine the most suspicious labels carefully; the careful
    // second look sees the noiseless truth.
    for _ in 0..config.review_pages {
        if run.remaining() == 0 {
            break;
        }
        let page = match run.session.review_page(page_size.min(run.remaining()), config.review_folds) {
            Ok(p) => p,
            Err(Error::InvalidArgument(_) | Error::DegenerateLabels(_)) => break,
            Err(e) => return Err(e),
        };
        let mut fixes = Vec::new();
        for item in &page.items {
            if run.remaining() == 0 {
                break;
            }
            run.used += 1;
            let Some(r) = run.session.catalog().index_of(&item.object_id) else { continue };
            let w = run.world_row[r];
            let careful = oracle_label(run.world.truth.score[w], false, run.world.spec.abstain_band);
            let value = match careful {
                OracleAnswer::Skip => LabelValue::Clear,
                a => a.label_value().unwrap(),
            };
            let current = item.label.map(|b| if b { LabelValue::Positive } else { LabelValue::Negative });
            if current != Some(value) {
                fixes.push(LabelInput::new(item.object_id.clone(), value, LabelMode::Review));
            }
        }
        run.advance(&fixes, Phase::Review)?;
    }
    Ok(())
}

/// Share of flipped labels that land in the top `top_fraction` of the
/// mislabel ordering, after flipping `flip_fraction` of a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub labeled: usize,
    pub flipped: usize,
    pub caught: usize,
    pub recall_at_top: f64,
}

/// Labels `n_labeled` pool objects with their noiseless truth (a class-
/// balanced uniform draw, oracle abstentions excluded), flips a seeded
/// `flip_fraction` of them, and checks where the flipped ones rank under the
/// review ordering.
pub fn review_experiment(
    world: &SyntheticWorld,
    n_labeled: usize,
    flip_fraction: f64,
    top_fraction: f64,
    config: &ProtocolConfig,
) -> Result<ReviewOutcome> {
    let (_, pool_rows) = world.split();
    let band = world.spec.abstain_band;
    let confident: Vec<usize> = pool_rows
        .iter()
        .copied()
        .filter(|&r| (world.truth.score[r] - 0.5).abs() >= band)
        .collect();
    let (pos, neg): (Vec<usize>, Vec<usize>) = confident.iter().partition(|&&r| world.truth.positive[r]);
    let half = n_labeled / 2;
    if pos.len() < half || neg.len() < n_labeled - half {
        return Err(invalid("not enough confident objects of each class"));
    }
    let mut rng = rng::seeded(world.spec.seed, "sim-review");
    let mut chosen: Vec<usize> = index::sample(&mut rng, pos.len(), half).into_iter().map(|i| pos[i]).collect();
    chosen.extend(index::sample(&mut rng, neg.len(), n_labeled - half).into_iter().map(|i| neg[i]));
    chosen.sort_unstable();
    let n_flip = ((n_labeled as f64) * flip_fraction).round() as usize;
    let flipped: BTreeSet<usize> = index::sample(&mut rng, n_labeled, n_flip).into_iter().collect();

    let records: Vec<ObjectRecord> = pool_rows.iter().map(|&r| world.catalog.get(r).clone()).collect();
    let catalog = Arc::new(Catalog::from_records(records, world.catalog.dim())?);
    let ctx = Arc::new(EngineContext::new(Arc::clone(&catalog))?);
    let mut project = Project::in_memory("review", world.spec.seed)?;
    project.set_lambda(config.lambda)?;
    let mut session = Session::new(project, ctx);
    let labels: Vec<LabelInput> = chosen
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let truth = world.truth.positive[w] != flipped.contains(&k);
            let v = if truth { LabelValue::Positive } else { LabelValue::Negative };
            LabelInput::new(world.catalog.get(w).id.clone(), v, LabelMode::Import)
        })
        .collect();
    session.advance_and_retrain(&labels, DateTime::<Utc>::UNIX_EPOCH)?;
    let top = ((n_labeled as f64) * top_fraction).round() as usize;
    let page = session.review_page(top.max(1), config.review_folds)?;
    let flipped_ids: BTreeSet<&str> = flipped.iter().map(|&k| world.catalog.get(chosen[k]).id.as_str()).collect();
    let caught = page
        .items
        .iter()
        .filter(|i| flipped_ids.contains(i.object_id.as_str()))
        .count();
    Ok(ReviewOutcome {
        labeled: n_labeled,
        flipped: n_flip,
        caught,
        recall_at_top: if n_flip == 0 { 1.0 } else { caught as f64 / n_flip as f64 },
    })
}

/// Plain-text summary of curves, one row per strategy at its final point.
pub fn summary_table(curves: &[LearningCurve]) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", 100.0 * x));
    let mut out = String::from("strategy  labels  pos  neg  precision  recall    F1  accuracy\n");
    for c in curves {
        if let Some(p) = c.last() {
            out.push_str(&format!(
                "{:<8}  {:>6}  {:>3}  {:>3}  {:>9}  {:>6}  {:>4}  {:>8}\n",
                format!("{:?}", c.strategy).to_lowercase(),
                p.labels_used,
                p.labeled_pos,
                p.labeled_neg,
                pct(p.scores.precision),
                pct(p.scores.recall),
                pct(p.scores.f1),
                pct(p.scores.accuracy),
            ));
        }
    }
    out
}
