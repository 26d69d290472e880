use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::catalog::Catalog;
use super::project::Project;
use crate::error::{Error, Result};

/// One exported row: model probability, overridden by a manual label.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow<'a> {
    pub id: &'a str,
    pub probability: f64,
    pub manual: Option<bool>,
}

/// A probability for every catalog object. Manually labeled objects export
/// 1.0 or 0.0 regardless of the model.
pub fn export_rows<'a>(project: &Project, catalog: &'a Catalog) -> Result<Vec<ExportRow<'a>>> {
    let model = project
        .model
        .as_ref()
        .ok_or_else(|| Error::FailedPrecondition(format!("project {:?} has no trained model", project.name)))?;
    model.check_features(&project.features)?;
    catalog
        .records()
        .iter()
        .map(|r| {
            let manual = project.log.label_of(&r.id);
            let probability = match manual {
                Some(true) => 1.0,
                Some(false) => 0.0,
                None => model.predict_proba(r, &project.features)?,
            };
            Ok(ExportRow {
                id: &r.id,
                probability,
                manual,
            })
        })
        .collect()
}

/// Writes `id<TAB>probability<TAB>manual_label` lines; the label column is
/// `POSITIVE`, `NEGATIVE` or empty.
pub fn write_export<W: Write>(rows: &[ExportRow<'_>], mut w: W) -> Result<()> {
    for row in rows {
        let label = match row.manual {
            Some(true) => "POSITIVE",
            Some(false) => "NEGATIVE",
            None => "",
        };
        writeln!(w, "{}\t{:?}\t{}", row.id, row.probability, label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_labels(project: &Project, catalog: &Catalog, path: impl AsRef<Path>) -> Result<usize> {
    let rows = export_rows(project, catalog)?;
    write_export(&rows, BufWriter::new(File::create(path)?))?;
    Ok(rows.len())
}
