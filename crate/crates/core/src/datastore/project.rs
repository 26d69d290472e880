use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::events::{LabelLog, LabelMode, LabelValue};
use crate::error::{invalid, Error, Result};
use crate::linmodel::{LinearModel, DEFAULT_LAMBDA};
use crate::textmatch::KeywordFeatureSet;

pub const DEFAULT_SEED: u64 = 20_221_128;

/// One binary property being labeled.
#[derive(Debug)]
pub struct Project {
    pub name: String,
    pub features: KeywordFeatureSet,
    /// Corner-case decisions ("is a phone case a container?").
    pub notes: String,
    pub seed: u64,
    pub lambda: f64,
    pub model: Option<LinearModel>,
    /// Bumped on every successful retrain.
    pub model_version: u64,
    /// Set when the last retrain failed and `model` is from an earlier state.
    pub model_stale: bool,
    pub log: LabelLog,
    dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ProjectMeta {
    name: String,
    keyword_features: KeywordFeatureSet,
    notes: String,
    seed: u64,
    lambda: f64,
    model_version: u64,
    model_stale: bool,
    model: Option<LinearModel>,
}

pub fn validate_project_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name.len() > 128
        || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(invalid(format!(
            "project name {name:?} must be 1-128 characters of [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

impl Project {
    pub fn in_memory(name: &str, seed: u64) -> Result<Self> {
        validate_project_name(name)?;
        Ok(Self {
            name: name.to_string(),
            features: KeywordFeatureSet::default(),
            notes: String::new(),
            seed,
            lambda: DEFAULT_LAMBDA,
            model: None,
            model_version: 0,
            model_stale: false,
            log: LabelLog::in_memory(),
            dir: None,
        })
    }

    /// Creates a new project directory under `root`.
    pub fn create(root: &Path, name: &str, seed: u64) -> Result<Self> {
        validate_project_name(name)?;
        let dir = root.join(name);
        if dir.join("project.json").exists() {
            return Err(Error::AlreadyExists(format!("project {name:?}")));
        }
        fs::create_dir_all(&dir)?;
        let mut p = Self::in_memory(name, seed)?;
        p.log = LabelLog::open(dir.join("events.jsonl"))?;
        p.dir = Some(dir);
        p.save()?;
        Ok(p)
    }

    pub fn open(root: &Path, name: &str) -> Result<Self> {
        validate_project_name(name)?;
        let dir = root.join(name);
        let meta_path = dir.join("project.json");
        if !meta_path.exists() {
            return Err(Error::NotFound(format!("project {name:?}")));
        }
        let meta: ProjectMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        Ok(Self {
            name: meta.name,
            features: meta.keyword_features,
            notes: meta.notes,
            seed: meta.seed,
            lambda: meta.lambda,
            model: meta.model,
            model_version: meta.model_version,
            model_stale: meta.model_stale,
            log: LabelLog::open(dir.join("events.jsonl"))?,
            dir: Some(dir),
        })
    }

    /// Names of all projects under `root`, sorted.
    pub fn list(root: &Path) -> Result<Vec<String>> {
        let mut names = Vec::new();
        if !root.exists() {
            return Ok(names);
        }
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            if entry.path().join("project.json").exists() {
                if let Some(n) = entry.file_name().to_str() {
                    names.push(n.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Writes metadata and model atomically (temp file + rename). No-op for
    /// in-memory projects.
    pub fn save(&self) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let meta = ProjectMeta {
            name: self.name.clone(),
            keyword_features: self.features.clone(),
            notes: self.notes.clone(),
            seed: self.seed,
            lambda: self.lambda,
            model_version: self.model_version,
            model_stale: self.model_stale,
            model: self.model.clone(),
        };
        let tmp = dir.join("project.json.tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer_pretty(&mut w, &meta)?;
            w.write_all(b"\n")?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(tmp, dir.join("project.json"))?;
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Appends one label event after checking the object exists.
    pub fn append_label(
        &mut self,
        catalog: &Catalog,
        object_id: &str,
        value: LabelValue,
        mode: LabelMode,
        ts: DateTime<Utc>,
        key: Option<String>,
    ) -> Result<u64> {
        if !catalog.contains(object_id) {
            return Err(Error::NotFound(format!("object {object_id:?}")));
        }
        if let Some(k) = &key {
            if let Some(e) = self.log.event_for_key(k) {
                return Ok(e.seq);
            }
        }
        let name = self.name.clone();
        self.log.append(&name, object_id, value, mode, ts, key)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::ObjectRecord;

    fn catalog() -> Catalog {
        Catalog::from_records(vec![ObjectRecord::new("a", "x", vec![0.0])], 1).unwrap()
    }

    #[test]
    fn unknown_object_is_not_found() {
        let mut p = Project::in_memory("p", 1).unwrap();
        let err = p
            .append_label(&catalog(), "zz", LabelValue::Positive, LabelMode::Active, Utc::now(), None)
            .unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn bad_names_rejected() {
        assert!(Project::in_memory("../etc", 1).is_err());
        assert!(Project::in_memory("", 1).is_err());
    }

    #[test]
    fn persisted_project_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = catalog();
        {
            let mut p = Project::create(dir.path(), "sharp", 9).unwrap();
            p.features.push("knife").unwrap();
            p.notes = "scissors count".into();
            p.append_label(&c, "a", LabelValue::Positive, LabelMode::WordSearch, Utc::now(), None)
                .unwrap();
            p.save().unwrap();
        }
        assert!(matches!(Project::create(dir.path(), "sharp", 9), Err(Error::AlreadyExists(_))));
        let p = Project::open(dir.path(), "sharp").unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.features.match_strings(), ["knife"]);
        assert_eq!(p.notes, "scissors count");
        assert_eq!(p.log.label_of("a"), Some(true));
        assert_eq!(Project::list(dir.path()).unwrap(), vec!["sharp"]);
    }
}
