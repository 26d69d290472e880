//! Catalog ingest, indexing, deduplication, the append-only label log,
//! project persistence, and label export.

mod catalog;
mod dedup;
mod events;
mod export;
mod project;
mod record;

pub use catalog::{Catalog, EmbeddingSlices, IngestOptions, IngestReport, Rejection};
pub use dedup::dedup_catalog;
pub use events::{read_events, replay, write_events, LabelEvent, LabelLog, LabelMap, LabelMode, LabelValue};
pub use export::{export_labels, export_rows, write_export, ExportRow};
pub use project::{validate_project_name, Project, DEFAULT_SEED};
pub use record::{Materials, ObjectRecord, SyntheticAttributes, KG_PER_POUND};
