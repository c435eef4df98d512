//! Append-only record/replay cache of raw model replies (`annotations.jsonl`).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotateError, PromptKind};

/// Cache key: SHA-256 over model name, prompt kind and the rendered prompt.
pub fn prompt_hash(model_name: &str, kind: PromptKind, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0x1f]);
    h.update(kind.as_str().as_bytes());
    h.update([0x1f]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub node_id: usize,
    pub prompt_hash: String,
    pub model_name: String,
    pub raw_response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct AnnotationCache {
    entries: Mutex<HashMap<String, CacheRecord>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl AnnotationCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            sink: None,
            path: None,
        }
    }

    /// Opens (creating if needed) a JSONL cache file. Existing lines are
    /// loaded; the last record for a hash wins.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AnnotateError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| AnnotateError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    AnnotateError::Cache(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                entries.insert(rec.prompt_hash.clone(), rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            entries: Mutex::new(entries),
            sink: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, prompt_hash: &str) -> Option<CacheRecord> {
        self.entries.lock().expect("cache lock").get(prompt_hash).cloned()
    }

    /// Persists one record as a single `write_all` of a full line, then
    /// makes it visible to lookups.
    pub fn insert(&self, record: CacheRecord) -> Result<(), AnnotateError> {
        if let Some(sink) = &self.sink {
            let mut line = serde_json::to_string(&record).map_err(|e| AnnotateError::Cache(e.to_string()))?;
            line.push('\n');
            let mut f = sink.lock().expect("cache file lock");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| AnnotateError::Cache(e.to_string()))?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(record.prompt_hash.clone(), record);
        Ok(())
    }
}
