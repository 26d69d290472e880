use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const KG_PER_POUND: f64 = 0.453_592_37;

/// Seller materials: either plain names/node ids (observed hard labels) or a
/// node id -> probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Materials {
    Names(Vec<String>),
    Probabilities(BTreeMap<String, f64>),
}

/// Values predicted for attributes the listing did not provide. An attribute
/// is either observed (in its regular field) or present here, never both.
/// Materials are split per taxonomy node: when the listing names only a
/// coarse material, this map holds the nodes it leaves open.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAttributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    /// Full per-node probability vector keyed by node id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<[f64; 5]>,
}

impl SyntheticAttributes {
    pub fn is_empty(&self) -> bool {
        self.price.is_none()
            && self.mass_kg.is_none()
            && self.materials.is_none()
            && self.category_path.is_none()
            && self.ratings.is_none()
    }

    pub fn flag_count(&self) -> usize {
        [
            self.price.is_some(),
            self.mass_kg.is_some(),
            self.materials.is_some(),
            self.category_path.is_some(),
            self.ratings.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }
}

/// One catalog object as stored on disk (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub text: String,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package_mass_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<Materials>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings_hist: Option<[u64; 5]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_reviews: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_refs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default, skip_serializing_if = "SyntheticAttributes::is_empty")]
    pub synthetic: SyntheticAttributes,
    /// Input-only pound masses, converted to kilograms at ingest.
    #[serde(default, skip_serializing)]
    pub mass_lb: Option<f64>,
    #[serde(default, skip_serializing)]
    pub package_mass_lb: Option<f64>,
}

impl ObjectRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, embedding: Vec<f64>) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            title: text.split('\n').next().unwrap_or_default().to_string(),
            text,
            embedding,
            price: None,
            mass_kg: None,
            package_mass_kg: None,
            materials: None,
            category_path: None,
            ratings_hist: None,
            num_reviews: None,
            image_refs: None,
            source_url: None,
            synthetic: SyntheticAttributes::default(),
            mass_lb: None,
            package_mass_lb: None,
        }
    }

    /// Number of optional attributes that carry a value.
    pub fn filled_attributes(&self) -> usize {
        [
            self.price.is_some(),
            self.mass_kg.is_some(),
            self.package_mass_kg.is_some(),
            self.materials.is_some(),
            self.category_path.is_some(),
            self.ratings_hist.is_some(),
            self.num_reviews.is_some(),
            self.image_refs.is_some(),
            self.source_url.is_some(),
            !self.title.is_empty(),
            !self.text.is_empty(),
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }

    /// Converts pound inputs and checks per-record invariants.
    pub fn normalize(&mut self, expected_dim: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.embedding.len() != expected_dim {
            return Err(invalid(format!(
                "embedding has {} dimensions, expected {expected_dim}",
                self.embedding.len()
            )));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(invalid("embedding contains a non-finite value"));
        }
        if let Some(lb) = self.mass_lb.take() {
            if self.mass_kg.is_none() {
                self.mass_kg = Some(lb * KG_PER_POUND);
            }
        }
        if let Some(lb) = self.package_mass_lb.take() {
            if self.package_mass_kg.is_none() {
                self.package_mass_kg = Some(lb * KG_PER_POUND);
            }
        }
        if let Some(p) = self.price {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(invalid(format!("price {p} must be a finite amount >= 0")));
            }
        }
        for (name, m) in [("mass_kg", self.mass_kg), ("package_mass_kg", self.package_mass_kg)] {
            if let Some(m) = m {
                if !(m > 0.0) || !m.is_finite() {
                    return Err(invalid(format!("{name} {m} must be positive")));
                }
            }
        }
        if let (Some(hist), Some(n)) = (self.ratings_hist, self.num_reviews) {
            let total: u64 = hist.iter().sum();
            if total != n {
                return Err(invalid(format!("ratings_hist sums to {total}, num_reviews is {n}")));
            }
        }
        if let Some(path) = &self.category_path {
            if path.is_empty() {
                return Err(invalid("empty category_path"));
            }
        }
        Ok(())
    }
}
