//! Append-only replay cache: one JSON record per line with the request key,
//! prompt kind, rendered prompt, and response. Human-inspectable with any
//! text tool, safe for concurrent appends (values at temperature 0 are
//! deterministic, so duplicate keys are benign).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    kind: String,
    request: String,
    response: String,
}

#[derive(Debug)]
pub struct ReplayCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

#[derive(Debug)]
struct Inner {
    entries: BTreeMap<String, String>,
    writer: Option<File>,
}

impl ReplayCache {
    /// Opens a cache for read and append, creating the file if absent.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let entries = load_entries(path)?;
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cache {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        Ok(ReplayCache {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                entries,
                writer: Some(writer),
            }),
        })
    }

    /// Opens an existing cache read-only (replay mode). Appends are dropped;
    /// a missing file is an error, since replay without recordings can only
    /// fail one prompt at a time.
    pub fn open_read_only(path: &Path) -> Result<Self, GatewayError> {
        if !path.exists() {
            return Err(GatewayError::Cache {
                path: path.to_path_buf(),
                msg: "replay cache not found".into(),
            });
        }
        let entries = load_entries(path)?;
        Ok(ReplayCache {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                entries,
                writer: None,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn put(&self, key: &str, kind: &str, request: &str, response: &str) {
        let mut inner = self.inner.lock().unwrap();
        let fresh = inner
            .entries
            .insert(key.to_string(), response.to_string())
            .is_none();
        if fresh {
            if let Some(w) = inner.writer.as_mut() {
                let record = CacheRecord {
                    key: key.to_string(),
                    kind: kind.to_string(),
                    request: request.to_string(),
                    response: response.to_string(),
                };
                let line = serde_json::to_string(&record).expect("cache record serialization");
                // Append failures degrade the cache, not the run.
                if let Err(e) = writeln!(w, "{line}") {
                    log::warn!("replay cache append failed: {e}");
                }
            }
        }
    }
}

fn load_entries(path: &Path) -> Result<BTreeMap<String, String>, GatewayError> {
    let mut entries = BTreeMap::new();
    if !path.exists() {
        return Ok(entries);
    }
    let file = File::open(path).map_err(|e| GatewayError::Cache {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Cache {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord =
            serde_json::from_str(&line).map_err(|e| GatewayError::Cache {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 1),
            })?;
        // Last write wins on duplicate keys.
        entries.insert(record.key, record.response);
    }
    Ok(entries)
}
