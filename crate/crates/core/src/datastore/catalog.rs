use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::ObjectRecord;
use crate::error::{invalid, Error, Result};
use crate::taxonomy::Taxonomy;

/// Where the image and text embeddings sit inside each record's vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSlices {
    pub text: Range<usize>,
    pub image: Range<usize>,
}

impl EmbeddingSlices {
    pub fn whole(dim: usize) -> Self {
        Self {
            text: 0..dim,
            image: 0..dim,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions<'a> {
    pub expected_dim: usize,
    pub slices: Option<EmbeddingSlices>,
    /// When given, every `category_path` must be a root-first path in it.
    pub category_taxonomy: Option<&'a Taxonomy>,
}

impl IngestOptions<'_> {
    pub fn with_dim(expected_dim: usize) -> Self {
        Self {
            expected_dim,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug)]
pub struct IngestReport {
    pub catalog: Catalog,
    pub rejected: Vec<Rejection>,
}

/// Immutable, id-indexed object catalog.
#[derive(Debug, Clone)]
pub struct Catalog {
    records: Vec<ObjectRecord>,
    by_id: HashMap<String, usize>,
    lower_text: Vec<String>,
    dim: usize,
    slices: EmbeddingSlices,
}

impl Catalog {
    pub fn from_records(records: Vec<ObjectRecord>, dim: usize) -> Result<Self> {
        Self::with_slices(records, dim, EmbeddingSlices::whole(dim))
    }

    pub fn with_slices(records: Vec<ObjectRecord>, dim: usize, slices: EmbeddingSlices) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        if slices.text.end > dim || slices.image.end > dim || slices.text.is_empty() || slices.image.is_empty() {
            return Err(invalid(format!("embedding slices {slices:?} do not fit dimension {dim}")));
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.embedding.len() != dim {
                return Err(invalid(format!(
                    "record {:?} has {} dimensions, expected {dim}",
                    r.id,
                    r.embedding.len()
                )));
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let lower_text = records.iter().map(|r| r.text.to_lowercase()).collect();
        Ok(Self {
            records,
            by_id,
            lower_text,
            dim,
            slices,
        })
    }

    /// Loads a line-delimited JSON catalog. Malformed or invalid lines are
    /// rejected individually; a duplicated id rejects the whole file.
    pub fn ingest(path: impl AsRef<Path>, opts: &IngestOptions<'_>) -> Result<IngestReport> {
        let file = File::open(path)?;
        Self::ingest_reader(BufReader::new(file), opts)
    }

    pub fn ingest_reader<R: BufRead>(reader: R, opts: &IngestOptions<'_>) -> Result<IngestReport> {
        if opts.expected_dim == 0 {
            return Err(invalid("expected_dim must be positive"));
        }
        let mut records = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut rejected = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    rejected.push(Rejection {
                        line: lineno,
                        id: None,
                        reason: format!("unreadable line: {e}"),
                    });
                    continue;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut rec: ObjectRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    rejected.push(Rejection {
                        line: lineno,
                        id: None,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if let Some(first) = seen.get(&rec.id) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate id {:?} (first seen on line {first})", rec.id),
                });
            }
            seen.insert(rec.id.clone(), lineno);
            let checked = rec.normalize(opts.expected_dim).and_then(|_| match (&rec.category_path, opts.category_taxonomy) {
                (Some(path), Some(tax)) => tax.validate_path(path).map(|_| ()),
                _ => Ok(()),
            });
            match checked {
                Ok(()) => records.push(rec),
                Err(e) => rejected.push(Rejection {
                    line: lineno,
                    id: Some(rec.id.clone()),
                    reason: e.to_string(),
                }),
            }
        }
        let slices = opts
            .slices
            .clone()
            .unwrap_or_else(|| EmbeddingSlices::whole(opts.expected_dim));
        let catalog = Self::with_slices(records, opts.expected_dim, slices)?;
        Ok(IngestReport { catalog, rejected })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slices(&self) -> &EmbeddingSlices {
        &self.slices
    }

    pub fn records(&self) -> &[ObjectRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ObjectRecord> {
        self.records
    }

    pub fn get(&self, idx: usize) -> &ObjectRecord {
        &self.records[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&ObjectRecord> {
        self.index_of(id).map(|i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Lower-cased text of record `idx`.
    pub fn lower_text(&self, idx: usize) -> &str {
        &self.lower_text[idx]
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.records.iter().map(|r| r.embedding.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(dim: usize) -> IngestOptions<'static> {
        IngestOptions::with_dim(dim)
    }

    #[test]
    fn loads_valid_records() {
        let data = r#"{"id":"a","text":"x","embedding":[1,2,3,4]}
{"id":"b","text":"y","embedding":[1,2,3,4]}
{"id":"c","text":"z","embedding":[1,2,3,4]}
"#;
        let rep = Catalog::ingest_reader(data.as_bytes(), &opts(4)).unwrap();
        assert_eq!(rep.catalog.len(), 3);
        assert!(rep.rejected.is_empty());
        assert_eq!(rep.catalog.by_id("b").unwrap().text, "y");
    }

    #[test]
    fn wrong_dimension_rejected_with_line() {
        let data = r#"{"id":"a","embedding":[1,2,3,4]}
{"id":"b","embedding":[1,2,3]}
{"id":"c","embedding":[1,2,3,4]}
"#;
        let rep = Catalog::ingest_reader(data.as_bytes(), &opts(4)).unwrap();
        assert_eq!(rep.catalog.len(), 2);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 2);
        assert_eq!(rep.rejected[0].id.as_deref(), Some("b"));
    }

    #[test]
    fn duplicate_id_rejects_file() {
        let data = r#"{"id":"A1","embedding":[1]}
{"id":"A1","embedding":[2]}
"#;
        let err = Catalog::ingest_reader(data.as_bytes(), &opts(1)).unwrap_err();
        assert!(err.to_string().contains("A1"));
    }

    #[test]
    fn garbage_line_rejected() {
        let data = "{\"id\":\"a\",\"embedding\":[1]}\nnot json\n";
        let rep = Catalog::ingest_reader(data.as_bytes(), &opts(1)).unwrap();
        assert_eq!(rep.catalog.len(), 1);
        assert_eq!(rep.rejected[0].line, 2);
    }

    #[test]
    fn category_paths_validated_against_taxonomy() {
        let tax = Taxonomy::parse("root\t\tRoot\nhome\troot\tHome\n").unwrap();
        let data = r#"{"id":"a","embedding":[1],"category_path":["root","home"]}
{"id":"b","embedding":[1],"category_path":["home"]}
"#;
        let o = IngestOptions {
            expected_dim: 1,
            category_taxonomy: Some(&tax),
            ..Default::default()
        };
        let rep = Catalog::ingest_reader(data.as_bytes(), &o).unwrap();
        assert_eq!(rep.catalog.len(), 1);
        assert_eq!(rep.rejected[0].id.as_deref(), Some("b"));
    }
}
