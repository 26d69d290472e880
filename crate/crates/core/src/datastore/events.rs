use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelValue {
    Positive,
    Negative,
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelMode {
    WordSearch,
    Active,
    Correction,
    Review,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub seq: u64,
    pub project: String,
    pub object_id: String,
    pub value: LabelValue,
    pub mode: LabelMode,
    pub ts: DateTime<Utc>,
    /// Client idempotency key; a retried request with the same key is not re-appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

/// Current label per object, `true` for positive.
pub type LabelMap = BTreeMap<String, bool>;

/// Last-write-wins fold of an event sequence.
pub fn replay(events: &[LabelEvent]) -> LabelMap {
    let mut map = LabelMap::new();
    for e in events {
        apply(&mut map, e);
    }
    map
}

fn apply(map: &mut LabelMap, e: &LabelEvent) {
    match e.value {
        LabelValue::Positive => {
            map.insert(e.object_id.clone(), true);
        }
        LabelValue::Negative => {
            map.insert(e.object_id.clone(), false);
        }
        LabelValue::Clear => {
            map.remove(&e.object_id);
        }
    }
}

/// Append-only label log with a materialized current-label index.
///
/// When backed by a file, every event is written and synced before
/// [`LabelLog::append`] returns.
#[derive(Debug, Default)]
pub struct LabelLog {
    events: Vec<LabelEvent>,
    current: LabelMap,
    keys: HashMap<String, usize>,
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
}

impl LabelLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replays an existing log (if any) and opens it for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut log = Self::in_memory();
        if path.exists() {
            for e in read_events(&path)? {
                log.push_checked(e)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        log.writer = Some(BufWriter::new(file));
        log.path = Some(path);
        Ok(log)
    }

    fn push_checked(&mut self, e: LabelEvent) -> Result<()> {
        if let Some(last) = self.events.last() {
            if e.seq <= last.seq {
                return Err(invalid(format!("event seq {} does not follow {}", e.seq, last.seq)));
            }
        }
        apply(&mut self.current, &e);
        if let Some(k) = &e.key {
            self.keys.insert(k.clone(), self.events.len());
        }
        self.events.push(e);
        Ok(())
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    /// Appends a fully formed event; its seq must exceed the last one.
    pub fn append_event(&mut self, e: LabelEvent) -> Result<u64> {
        if let Some(last) = self.events.last() {
            if e.seq <= last.seq {
                return Err(invalid(format!("event seq {} does not follow {}", e.seq, last.seq)));
            }
        }
        if let Some(w) = self.writer.as_mut() {
            serde_json::to_writer(&mut *w, &e)?;
            w.write_all(b"\n")?;
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        let seq = e.seq;
        self.push_checked(e)?;
        Ok(seq)
    }

    pub fn append(
        &mut self,
        project: &str,
        object_id: &str,
        value: LabelValue,
        mode: LabelMode,
        ts: DateTime<Utc>,
        key: Option<String>,
    ) -> Result<u64> {
        self.append_event(LabelEvent {
            seq: self.next_seq(),
            project: project.to_string(),
            object_id: object_id.to_string(),
            value,
            mode,
            ts,
            key,
        })
    }

    pub fn event_for_key(&self, key: &str) -> Option<&LabelEvent> {
        self.keys.get(key).map(|&i| &self.events[i])
    }

    pub fn events(&self) -> &[LabelEvent] {
        &self.events
    }

    pub fn current(&self) -> &LabelMap {
        &self.current
    }

    pub fn label_of(&self, object_id: &str) -> Option<bool> {
        self.current.get(object_id).copied()
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.current.values().filter(|&&v| v).count();
        (pos, self.current.len() - pos)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

pub fn read_events(path: &Path) -> Result<Vec<LabelEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LabelEvent = serde_json::from_str(&line).map_err(|err| Error::Parse {
            line: i + 1,
            message: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[LabelEvent]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
