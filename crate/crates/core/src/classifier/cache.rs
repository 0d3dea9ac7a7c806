//! Append-only completion cache.
//!
//! One JSON object per line: `{prompt_hash, model_id, raw_response,
//! created_at}`. Lookups are keyed by `(prompt_hash, model_id)`; when a key
//! occurs more than once the last line wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_hash: String,
    pub model_id: String,
    pub raw_response: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("loading cache: {0}")]
    Load(#[from] jsonl::JsonlError),
    #[error("writing cache {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

type Key = (String, String);

pub struct CompletionCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, String>>,
    writer: Mutex<Option<File>>,
}

impl CompletionCache {
    /// Loads `path` if it exists and opens it for appending.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut entries = HashMap::new();
        if path.is_file() {
            for e in jsonl::read::<CacheEntry>(path)? {
                entries.insert((e.prompt_hash, e.model_id), e.raw_response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| CacheError::Write {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    /// A cache that is never persisted.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, prompt_hash: &str, model_id: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap()
            .get(&(prompt_hash.to_string(), model_id.to_string()))
            .cloned()
    }

    /// Appends and flushes the entry before making it visible to lookups.
    pub fn put(&self, entry: CacheEntry) -> Result<(), CacheError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_vec(&entry).expect("cache entry serializes");
            line.push(b'\n');
            file.write_all(&line)
                .and_then(|_| file.flush())
                .and_then(|_| file.sync_data())
                .map_err(|source| CacheError::Write {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        self.entries
            .write()
            .unwrap()
            .insert((entry.prompt_hash, entry.model_id), entry.raw_response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(hash: &str, raw: &str) -> CacheEntry {
        CacheEntry {
            prompt_hash: hash.into(),
            model_id: "m".into(),
            raw_response: raw.into(),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn persists_and_reloads_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = CompletionCache::open(&path).unwrap();
            c.put(entry("h1", "first")).unwrap();
            c.put(entry("h1", "second")).unwrap();
            c.put(entry("h2", "other")).unwrap();
            assert_eq!(c.get("h1", "m").as_deref(), Some("second"));
        }
        let c = CompletionCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("h1", "m").as_deref(), Some("second"));
        assert_eq!(c.get("h1", "other-model"), None);
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 3);
    }

    #[test]
    fn write_failure_is_reported() {
        let full = Path::new("/dev/full");
        if !full.exists() {
            return;
        }
        let file = OpenOptions::new().append(true).open(full).unwrap();
        let c = CompletionCache {
            path: Some(full.to_path_buf()),
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(Some(file)),
        };
        assert!(matches!(
            c.put(entry("h", "x")),
            Err(CacheError::Write { .. })
        ));
        assert_eq!(c.get("h", "m"), None);
    }
}
