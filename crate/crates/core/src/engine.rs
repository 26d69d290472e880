//! The labeling session: candidate selection per mode, retrain on page
//! advance, and session statistics.
//!
//! Modes:
//! - search: seeded shuffle of every object whose text contains a term;
//! - active: the unlabeled objects whose probability is closest to 0.5,
//!   scored over a seeded sample of the unlabeled pool;
//! - correction: a seeded sample of unlabeled objects whose probability lies
//!   in a user-chosen range;
//! - review: labeled objects by descending cross-validated mislabel score.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datastore::{Catalog, LabelMode, LabelValue, Project};
use crate::error::{invalid, Error, Result};
use crate::linmodel::{
    design_row, fit_logistic, mislabel_scores_kfold, rank_by_score, LinearModel, Standardizer, DEFAULT_FOLDS,
};
use crate::rng;
use crate::textmatch::{self, KeywordFeatureSet};

pub const DEFAULT_POOL_SIZE: usize = 50_000;
pub const DEFAULT_PAGE_SIZE: usize = 48;

/// Catalog snapshot plus its standardized embedding matrix (row-major).
#[derive(Debug)]
pub struct EngineContext {
    catalog: Arc<Catalog>,
    standardizer: Standardizer,
    standardized: Vec<f64>,
}

impl EngineContext {
    /// Standardizes every embedding with moments fitted over the catalog.
    pub fn new(catalog: Arc<Catalog>) -> Result<Self> {
        let embeddings: Vec<&[f64]> = catalog.embeddings().collect();
        let standardizer = Standardizer::fit(&embeddings)?;
        let mut standardized = Vec::with_capacity(catalog.len() * catalog.dim());
        for e in embeddings {
            standardizer.transform_into(e, &mut standardized);
        }
        Ok(Self {
            catalog,
            standardizer,
            standardized,
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.catalog.dim();
        &self.standardized[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Search,
    Active,
    Correction,
    Review,
}

impl Mode {
    pub fn label_mode(self) -> LabelMode {
        match self {
            Mode::Search => LabelMode::WordSearch,
            Mode::Active => LabelMode::Active,
            Mode::Correction => LabelMode::Correction,
            Mode::Review => LabelMode::Review,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub object_id: String,
    /// Current model probability; absent before any model exists. In review
    /// mode this is the cross-validated (held-out) probability.
    pub probability: Option<f64>,
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mislabel_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub unlabeled_pool_size: usize,
    pub labeled_pos: usize,
    pub labeled_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePage {
    pub mode: Mode,
    pub items: Vec<CandidateItem>,
    pub page_token: String,
    pub pool_stats: PoolStats,
    /// Total candidates available to this mode (search matches, in-range
    /// objects, labeled objects); equals the item count in active mode.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInput {
    pub object_id: String,
    pub value: LabelValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<LabelMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl LabelInput {
    pub fn new(object_id: impl Into<String>, value: LabelValue, mode: LabelMode) -> Self {
        Self {
            object_id: object_id.into(),
            value,
            mode: Some(mode),
            key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCounts {
    pub positive: usize,
    pub negative: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub retrained: bool,
    pub iterations: usize,
    pub final_gradient_norm: Option<f64>,
    /// Share of a seeded unlabeled pool sample predicted positive.
    pub pool_positive_rate: Option<f64>,
    pub labeled_counts: LabeledCounts,
    pub events_appended: usize,
    pub model_version: u64,
    pub model_stale: bool,
}

/// A project bound to an engine context.
#[derive(Debug)]
pub struct Session {
    pub project: Project,
    ctx: Arc<EngineContext>,
    pool_size: usize,
    bits: Option<(u64, Vec<Vec<bool>>)>,
    /// Objects the annotator passed over this session; kept out of active and
    /// correction pages so they are not shown again and again.
    skipped: BTreeSet<String>,
}

impl Session {
    pub fn new(project: Project, ctx: Arc<EngineContext>) -> Self {
        Self {
            project,
            ctx,
            pool_size: DEFAULT_POOL_SIZE,
            bits: None,
            skipped: BTreeSet::new(),
        }
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size.max(1);
        self
    }

    pub fn context(&self) -> &Arc<EngineContext> {
        &self.ctx
    }

    pub fn catalog(&self) -> &Catalog {
        &self.ctx.catalog
    }

    fn ensure_bits(&mut self) {
        let version = self.project.features.version();
        if matches!(&self.bits, Some((v, b)) if *v == version && b.len() == self.ctx.catalog.len()) {
            return;
        }
        let features = &self.project.features;
        let cat = &self.ctx.catalog;
        let bits = (0..cat.len()).map(|i| features.bits_lower(cat.lower_text(i))).collect();
        self.bits = Some((version, bits));
    }

    fn row_bits(&self, i: usize) -> &[bool] {
        match &self.bits {
            Some((_, b)) => &b[i],
            None => &[],
        }
    }

    /// Design row `[standardized embedding, keyword bits]` for catalog row `i`.
    pub fn design(&mut self, i: usize) -> Vec<f64> {
        self.ensure_bits();
        design_row(self.ctx.row(i), self.row_bits(i))
    }

    /// Probability for catalog row `i` under the current model, if any.
    pub fn probability(&mut self, i: usize) -> Option<f64> {
        self.ensure_bits();
        let model = self.project.model.as_ref()?;
        if model.check_features(&self.project.features).is_err() {
            return None;
        }
        Some(model.predict_parts(self.ctx.row(i), self.row_bits(i)))
    }

    fn scores_for(&mut self, rows: &[usize]) -> Result<Vec<f64>> {
        self.ensure_bits();
        let model = self
            .project
            .model
            .as_ref()
            .ok_or_else(|| Error::FailedPrecondition("no trained model".into()))?;
        model.check_features(&self.project.features)?;
        Ok(rows
            .iter()
            .map(|&i| model.predict_parts(self.ctx.row(i), self.row_bits(i)))
            .collect())
    }

    pub fn labeled_counts(&self) -> LabeledCounts {
        let (positive, negative) = self.project.log.counts();
        LabeledCounts {
            positive,
            negative,
            total: positive + negative,
        }
    }

    fn pool_stats(&self) -> PoolStats {
        let c = self.labeled_counts();
        PoolStats {
            unlabeled_pool_size: self.ctx.catalog.len() - c.total,
            labeled_pos: c.positive,
            labeled_neg: c.negative,
        }
    }

    /// Unlabeled catalog rows in ascending order.
    pub fn unlabeled_rows(&self) -> Vec<usize> {
        let labels = self.project.log.current();
        (0..self.ctx.catalog.len())
            .filter(|&i| !labels.contains_key(&self.ctx.catalog.get(i).id))
            .collect()
    }

    /// Unlabeled rows not skipped in this session.
    fn candidate_rows(&self) -> Vec<usize> {
        let mut rows = self.unlabeled_rows();
        if !self.skipped.is_empty() {
            rows.retain(|&i| !self.skipped.contains(&self.ctx.catalog.get(i).id));
        }
        rows
    }

    /// Records objects the annotator could not label with confidence.
    pub fn mark_skipped<I, S>(&mut self, ids: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.skipped.extend(ids.into_iter().map(Into::into));
    }

    pub fn skipped(&self) -> &BTreeSet<String> {
        &self.skipped
    }

    /// Seed material that changes whenever labels or the model change.
    fn state_tag(&self, mode: &str) -> String {
        format!(
            "{mode}:{}:{}:{}:{}",
            self.project.log.next_seq(),
            self.project.model_version,
            self.project.features.version(),
            self.skipped.len()
        )
    }

    fn sample_pool(&self, unlabeled: &[usize], pool_size: usize, tag: &str) -> Vec<usize> {
        if unlabeled.len() <= pool_size {
            return unlabeled.to_vec();
        }
        let mut rng = rng::seeded(self.project.seed, tag);
        let mut picked: Vec<usize> = index::sample(&mut rng, unlabeled.len(), pool_size)
            .into_iter()
            .map(|k| unlabeled[k])
            .collect();
        picked.sort_unstable();
        picked
    }

    fn item(&mut self, row: usize, probability: Option<f64>) -> CandidateItem {
        let id = self.ctx.catalog.get(row).id.clone();
        let label = self.project.log.label_of(&id);
        CandidateItem {
            object_id: id,
            probability,
            label,
            mislabel_score: None,
        }
    }

    fn token(&self, mode: Mode, extra: &str) -> String {
        format!("{mode:?}-{}-{}-{extra}", self.project.log.next_seq(), self.project.model_version).to_lowercase()
    }

    /// One page of word-search matches; labeled matches are shown with their labels.
    pub fn search_page(&mut self, term: &str, page: usize, page_size: usize) -> Result<CandidatePage> {
        let found = textmatch::word_search(&self.ctx.catalog, term, self.project.seed, page, page_size)?;
        let items = found
            .rows
            .iter()
            .map(|&r| {
                let p = self.probability(r);
                self.item(r, p)
            })
            .collect();
        Ok(CandidatePage {
            mode: Mode::Search,
            items,
            page_token: self.token(Mode::Search, &format!("{page}")),
            pool_stats: self.pool_stats(),
            total: found.total,
        })
    }

    fn require_model(&mut self) -> Result<()> {
        let stale = match &self.project.model {
            Some(m) => m.check_features(&self.project.features).is_err(),
            None => true,
        };
        if !stale {
            return Ok(());
        }
        let c = self.labeled_counts();
        if c.positive == 0 || c.negative == 0 {
            return Err(Error::FailedPrecondition(format!(
                "need at least one positive and one negative label (have {} / {}); use word search first",
                c.positive, c.negative
            )));
        }
        self.retrain()?;
        if self.project.model.is_none() {
            return Err(Error::FailedPrecondition("model could not be trained".into()));
        }
        Ok(())
    }

    /// The `page_size` unlabeled objects closest to 0.5 among a seeded sample
    /// of `pool_size` unlabeled objects; ties by object id.
    pub fn next_uncertain_page(&mut self, pool_size: usize, page_size: usize) -> Result<CandidatePage> {
        if page_size == 0 || pool_size == 0 {
            return Err(invalid("pool_size and page_size must be at least 1"));
        }
        self.require_model()?;
        let unlabeled = self.candidate_rows();
        let pool = self.sample_pool(&unlabeled, pool_size, &self.state_tag("active"));
        let probs = self.scores_for(&pool)?;
        let cat = Arc::clone(&self.ctx.catalog);
        let mut ranked: Vec<(usize, f64)> = pool.into_iter().zip(probs).collect();
        ranked.sort_by(|a, b| {
            (a.1 - 0.5)
                .abs()
                .total_cmp(&(b.1 - 0.5).abs())
                .then_with(|| cat.get(a.0).id.cmp(&cat.get(b.0).id))
        });
        ranked.truncate(page_size);
        let total = ranked.len();
        let items = ranked.into_iter().map(|(r, p)| self.item(r, Some(p))).collect();
        Ok(CandidatePage {
            mode: Mode::Active,
            items,
            page_token: self.token(Mode::Active, ""),
            pool_stats: self.pool_stats(),
            total,
        })
    }

    /// A seeded uniform sample of unlabeled objects with probability in `[lo, hi]`.
    pub fn range_page(&mut self, lo: f64, hi: f64, page_size: usize) -> Result<CandidatePage> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(invalid(format!("probability range needs 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
        }
        if page_size == 0 {
            return Err(invalid("page_size must be at least 1"));
        }
        self.require_model()?;
        let unlabeled = self.candidate_rows();
        let probs = self.scores_for(&unlabeled)?;
        let in_range: Vec<(usize, f64)> = unlabeled
            .into_iter()
            .zip(probs)
            .filter(|(_, p)| *p >= lo && *p <= hi)
            .collect();
        let total = in_range.len();
        let take = page_size.min(total);
        let mut rng = rng::seeded(self.project.seed, &self.state_tag(&format!("range:{lo}:{hi}")));
        let picked: Vec<(usize, f64)> = index::sample(&mut rng, total, take)
            .into_iter()
            .map(|k| in_range[k])
            .collect();
        let items = picked.into_iter().map(|(r, p)| self.item(r, Some(p))).collect();
        Ok(CandidatePage {
            mode: Mode::Correction,
            items,
            page_token: self.token(Mode::Correction, &format!("{lo}-{hi}")),
            pool_stats: self.pool_stats(),
            total,
        })
    }

    /// Labeled objects ordered by descending `k`-fold mislabel score.
    pub fn review_page(&mut self, page_size: usize, k: usize) -> Result<CandidatePage> {
        if page_size == 0 {
            return Err(invalid("page_size must be at least 1"));
        }
        let (rows, y) = self.labeled_rows();
        let design: Vec<Vec<f64>> = rows.iter().map(|&r| self.design(r)).collect();
        let mut scores = mislabel_scores_kfold(&design, &y, k, self.project.lambda, self.project.seed)?;
        rank_by_score(&mut scores);
        let total = scores.len();
        let items = scores
            .into_iter()
            .take(page_size)
            .map(|s| {
                let mut item = self.item(rows[s.index], Some(s.heldout_prob));
                item.mislabel_score = Some(s.score);
                item
            })
            .collect();
        Ok(CandidatePage {
            mode: Mode::Review,
            items,
            page_token: self.token(Mode::Review, &format!("{k}")),
            pool_stats: self.pool_stats(),
            total,
        })
    }

    pub fn review_page_default(&mut self, page_size: usize) -> Result<CandidatePage> {
        self.review_page(page_size, DEFAULT_FOLDS)
    }

    /// Labeled catalog rows (ascending) with their labels.
    pub fn labeled_rows(&self) -> (Vec<usize>, Vec<bool>) {
        let cat = &self.ctx.catalog;
        self.project
            .log
            .current()
            .iter()
            .filter_map(|(id, &y)| cat.index_of(id).map(|r| (r, y)))
            .collect::<std::collections::BTreeMap<_, _>>()
            .into_iter()
            .unzip()
    }

    /// Appends the page's labels and refits the model on every current label.
    /// With no new events the previous model is kept as is.
    pub fn advance_and_retrain(&mut self, labels: &[LabelInput], now: DateTime<Utc>) -> Result<TrainReport> {
        for l in labels {
            if !self.ctx.catalog.contains(&l.object_id) {
                return Err(Error::NotFound(format!("object {:?}", l.object_id)));
            }
        }
        let mut appended = 0;
        let catalog = Arc::clone(&self.ctx.catalog);
        for l in labels {
            let before = self.project.log.next_seq();
            self.project.append_label(
                &catalog,
                &l.object_id,
                l.value,
                l.mode.unwrap_or(LabelMode::Active),
                now,
                l.key.clone(),
            )?;
            if self.project.log.next_seq() != before {
                appended += 1;
            }
        }
        if appended == 0 {
            let mut report = self.report(false, None);
            report.events_appended = 0;
            return Ok(report);
        }
        let mut report = self.retrain()?;
        report.events_appended = appended;
        Ok(report)
    }

    /// Refits on all current labels. Single-class label sets keep the
    /// previous model and mark it stale instead of failing.
    pub fn retrain(&mut self) -> Result<TrainReport> {
        let (rows, y) = self.labeled_rows();
        let design: Vec<Vec<f64>> = rows.iter().map(|&r| self.design(r)).collect();
        if design.is_empty() {
            self.project.model_stale = self.project.model.is_some();
            self.project.save()?;
            return Ok(self.report(false, None));
        }
        match fit_logistic(&design, &y, self.project.lambda) {
            Ok(fit) => {
                let meta = fit.meta.clone();
                let model = LinearModel::from_fit(
                    fit,
                    self.project.lambda,
                    self.ctx.standardizer.clone(),
                    &self.project.features,
                )?;
                self.project.model = Some(model);
                self.project.model_version += 1;
                self.project.model_stale = false;
                self.project.save()?;
                Ok(self.report(true, Some(meta)))
            }
            Err(Error::DegenerateLabels(_)) => {
                self.project.model_stale = true;
                self.project.save()?;
                Ok(self.report(false, None))
            }
            Err(e) => Err(e),
        }
    }

    fn report(&mut self, retrained: bool, meta: Option<crate::linmodel::TrainMeta>) -> TrainReport {
        let pool_positive_rate = self.pool_positive_rate().ok();
        TrainReport {
            retrained,
            iterations: meta.as_ref().map_or(0, |m| m.iterations),
            final_gradient_norm: meta.map(|m| m.final_gradient_norm),
            pool_positive_rate,
            labeled_counts: self.labeled_counts(),
            events_appended: 0,
            model_version: self.project.model_version,
            model_stale: self.project.model_stale,
        }
    }

    /// Share of a seeded unlabeled pool sample with probability >= 0.5.
    pub fn pool_positive_rate(&mut self) -> Result<f64> {
        let unlabeled = self.unlabeled_rows();
        let pool = self.sample_pool(&unlabeled, self.pool_size, &format!("pool-rate:{}", self.project.model_version));
        if pool.is_empty() {
            return Err(Error::FailedPrecondition("unlabeled pool is empty".into()));
        }
        let probs = self.scores_for(&pool)?;
        Ok(probs.iter().filter(|&&p| p >= 0.5).count() as f64 / probs.len() as f64)
    }

    pub fn set_features(&mut self, features: KeywordFeatureSet) {
        self.project.features = features;
        self.bits = None;
    }
}
