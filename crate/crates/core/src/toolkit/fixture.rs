//! Fixture-backed tools and the recorder that produces fixtures.
//!
//! A fixture store is a directory of `*.jsonl` files, one record per line:
//!
//! ```text
//! {"verb":"Google","argument":"Romney Ryan 2012","item":"gc-19","observation":"Retrieved Information 1: ..."}
//! ```
//!
//! `item` is optional; records without it answer for every item. Records
//! are matched on verb (case-insensitive), argument digest and item.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{argument_digest, Tool, ToolError, ToolOutput};
use crate::domain::NewsItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub verb: String,
    pub argument: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub observation: String,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("fixture directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Key = (String, String, Option<String>);

/// In-memory index of fixture records.
#[derive(Debug, Default, Clone)]
pub struct FixtureStore {
    records: HashMap<Key, String>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.jsonl` file in `dir`, in file-name order. The first
    /// record for a key wins.
    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        if !dir.is_dir() {
            return Err(FixtureError::MissingDir(dir.to_path_buf()));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut store = Self::new();
        for path in files {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = parse_fixture_line(&line).map_err(|message| FixtureError::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message,
                })?;
                store.insert(rec);
            }
        }
        Ok(store)
    }

    /// Adds a record unless its key is already present. Returns whether it was added.
    pub fn insert(&mut self, rec: FixtureRecord) -> bool {
        let key = (
            rec.verb.to_ascii_lowercase(),
            argument_digest(&rec.argument),
            rec.item,
        );
        if self.records.contains_key(&key) {
            log::debug!(
                "duplicate fixture for {}[{}], keeping the first",
                rec.verb,
                rec.argument
            );
            return false;
        }
        self.records.insert(key, rec.observation);
        true
    }

    pub fn lookup(&self, verb: &str, argument: &str, item: &str) -> Option<&str> {
        let verb = verb.to_ascii_lowercase();
        let digest = argument_digest(argument);
        self.records
            .get(&(verb.clone(), digest.clone(), Some(item.to_string())))
            .or_else(|| self.records.get(&(verb, digest, None)))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parses one fixture line; the error is a human-readable message.
pub fn parse_fixture_line(line: &str) -> Result<FixtureRecord, String> {
    serde_json::from_str::<FixtureRecord>(line).map_err(|e| e.to_string())
}

/// Serves observations from a [`FixtureStore`].
#[derive(Debug, Clone)]
pub struct FixtureTool {
    store: Arc<FixtureStore>,
}

impl FixtureTool {
    pub fn new(store: Arc<FixtureStore>) -> Self {
        Self { store }
    }
}

impl Tool for FixtureTool {
    fn call(&self, verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError> {
        self.store
            .lookup(verb, argument, &item.id)
            .map(ToolOutput::text)
            .ok_or_else(|| ToolError::Transport(format!("no fixture for {verb}[{argument}]")))
    }
}

/// Wraps a tool and appends every successful observation to a fixture file.
pub struct RecordingTool {
    inner: Arc<dyn Tool>,
    sink: Arc<Mutex<File>>,
}

impl RecordingTool {
    pub fn new(inner: Arc<dyn Tool>, sink: Arc<Mutex<File>>) -> Self {
        Self { inner, sink }
    }

    /// Opens (creating) `dir/recorded.jsonl` for appending.
    pub fn open_sink(dir: &Path) -> Result<Arc<Mutex<File>>, FixtureError> {
        fs::create_dir_all(dir)?;
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("recorded.jsonl"))?;
        Ok(Arc::new(Mutex::new(f)))
    }
}

impl Tool for RecordingTool {
    fn call(&self, verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError> {
        let out = self.inner.call(verb, argument, item)?;
        let rec = FixtureRecord {
            verb: verb.to_string(),
            argument: argument.to_string(),
            item: Some(item.id.clone()),
            observation: out.observation.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("fixture record serializes");
        line.push('\n');
        let mut f = self.sink.lock().expect("fixture sink poisoned");
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
            log::warn!("could not record fixture for {verb}: {e}");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_scoped_records_take_precedence() {
        let mut s = FixtureStore::new();
        s.insert(FixtureRecord {
            verb: "VQA".into(),
            argument: "q".into(),
            item: None,
            observation: "generic".into(),
        });
        s.insert(FixtureRecord {
            verb: "VQA".into(),
            argument: "q".into(),
            item: Some("a".into()),
            observation: "specific".into(),
        });
        assert_eq!(s.lookup("vqa", "q", "a"), Some("specific"));
        assert_eq!(s.lookup("VQA", "q", "b"), Some("generic"));
        assert_eq!(s.lookup("VQA", "other", "a"), None);
    }

    #[test]
    fn first_record_wins() {
        let mut s = FixtureStore::new();
        assert!(s.insert(FixtureRecord {
            verb: "G".into(),
            argument: "q".into(),
            item: None,
            observation: "1".into()
        }));
        assert!(!s.insert(FixtureRecord {
            verb: "G".into(),
            argument: "q".into(),
            item: None,
            observation: "2".into()
        }));
        assert_eq!(s.lookup("G", "q", "x"), Some("1"));
    }

    #[test]
    fn load_dir_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("a.jsonl"),
            "{\"verb\":\"G\",\"argument\":\"q\",\"observation\":\"o\"}\n\nnot json\n",
        )
        .unwrap();
        match FixtureStore::load_dir(dir.path()) {
            Err(FixtureError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recorder_output_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FixtureStore::new();
        store.insert(FixtureRecord {
            verb: "Google".into(),
            argument: "q".into(),
            item: None,
            observation: "obs".into(),
        });
        let inner: Arc<dyn Tool> = Arc::new(FixtureTool::new(Arc::new(store)));
        let rec = RecordingTool::new(inner, RecordingTool::open_sink(dir.path()).unwrap());
        let item = NewsItem::new("i1", "t");
        assert_eq!(rec.call("Google", "q", &item).unwrap().observation, "obs");
        assert!(rec.call("Google", "missing", &item).is_err());
        let loaded = FixtureStore::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded.lookup("Google", "q", "i1"), Some("obs"));
    }
}
