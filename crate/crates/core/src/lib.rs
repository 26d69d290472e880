//! Smart Labeling engine for large object catalogs.
//!
//! Logistic property models are trained over precomputed object embeddings
//! plus keyword features, driven by word search, uncertainty sampling,
//! range correction and cross-validated review. The crate also carries the
//! material taxonomy machinery, the attribute imputer, the autoencoder that
//! produces object embeddings, and a synthetic harness that replays the whole
//! labeling protocol with a simulated annotator.

pub mod datastore;
pub mod embedder;
pub mod engine;
pub mod error;
pub mod imputer;
pub mod linmodel;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod taxonomy;
pub mod textmatch;

pub use error::{Error, Result};
