//! Binary keyword features and word search over listing text.
//!
//! Matching is plain case-insensitive substring containment: "sharp" fires on
//! "Knife Sharpener". No stemming, no regular expressions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datastore::{Catalog, ObjectRecord};
use crate::error::{invalid, Result};
use crate::rng;

/// Ordered keyword match strings. `version` increases on every edit so a model
/// trained against an older feature layout can be detected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFeatureSet {
    match_strings: Vec<String>,
    version: u64,
}

impl KeywordFeatureSet {
    pub fn new<I, S>(strings: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::default();
        for s in strings {
            set.push(s.as_ref())?;
        }
        set.version = 0;
        Ok(set)
    }

    pub fn match_strings(&self) -> &[String] {
        &self.match_strings
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.match_strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.match_strings.is_empty()
    }

    pub fn push(&mut self, s: &str) -> Result<()> {
        let s = s.to_lowercase();
        if s.is_empty() {
            return Err(invalid("keyword feature must be a nonempty string"));
        }
        if self.match_strings.contains(&s) {
            return Err(crate::error::Error::AlreadyExists(format!("keyword feature {s:?}")));
        }
        self.match_strings.push(s);
        self.version += 1;
        Ok(())
    }

    pub fn remove(&mut self, s: &str) -> Result<()> {
        let s = s.to_lowercase();
        let pos = self
            .match_strings
            .iter()
            .position(|m| *m == s)
            .ok_or_else(|| crate::error::Error::NotFound(format!("keyword feature {s:?}")))?;
        self.match_strings.remove(pos);
        self.version += 1;
        Ok(())
    }

    /// Bits for already lower-cased text.
    pub fn bits_lower(&self, lower_text: &str) -> Vec<bool> {
        self.match_strings.iter().map(|m| lower_text.contains(m.as_str())).collect()
    }
}

/// Bit `i` is set iff the lower-cased text contains `match_strings[i]`.
pub fn keyword_bits(object: &ObjectRecord, features: &KeywordFeatureSet) -> Vec<bool> {
    features.bits_lower(&object.text.to_lowercase())
}

/// All catalog rows whose text contains `term`, in ascending row order.
pub fn matching_rows(catalog: &Catalog, term: &str) -> Result<Vec<usize>> {
    let term = term.to_lowercase();
    if term.trim().is_empty() {
        return Err(invalid("search term must be nonempty"));
    }
    Ok((0..catalog.len())
        .filter(|&i| catalog.lower_text(i).contains(term.as_str()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchPage {
    /// Catalog rows on this page.
    pub rows: Vec<usize>,
    /// Matches across all pages.
    pub total: usize,
    pub page: usize,
}

/// Seeded shuffle of every match, then one page of it.
pub fn word_search(catalog: &Catalog, term: &str, seed: u64, page: usize, page_size: usize) -> Result<SearchPage> {
    if page_size == 0 {
        return Err(invalid("page_size must be at least 1"));
    }
    let mut rows = matching_rows(catalog, term)?;
    rows.shuffle(&mut rng::seeded(seed, &format!("word_search:{}", term.to_lowercase())));
    let total = rows.len();
    let start = page.saturating_mul(page_size).min(total);
    let end = (start + page_size).min(total);
    Ok(SearchPage {
        rows: rows[start..end].to_vec(),
        total,
        page,
    })
}
