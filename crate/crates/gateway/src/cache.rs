//! Append-only JSON-lines response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::params::GatewayError;

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model: String,
    pub template_id: String,
    /// Dataset key of the entity.
    pub entity: String,
    /// Bit pattern of the temperature, so 0.5 and 0.50000001 differ.
    pub temperature_bits: u64,
    pub prompt_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub model: String,
    pub template_id: String,
    pub entity: String,
    pub temperature: f64,
    pub prompt_digest: String,
    pub response: String,
    pub attempts: u32,
    /// Seconds since the Unix epoch when the entry was written.
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            model: self.model.clone(),
            template_id: self.template_id.clone(),
            entity: self.entity.clone(),
            temperature_bits: self.temperature.to_bits(),
            prompt_digest: self.prompt_digest.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
    writer: Mutex<File>,
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    /// Opens (creating if needed) `dir/responses.jsonl`. A torn final line
    /// from an interrupted write is ignored.
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| cache_err(&path, e))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| cache_err(&path, e))?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key(), entry);
                    }
                    Err(e) if i + 1 == last => warn!(line = i + 1, error = %e, "ignoring torn cache line"),
                    Err(e) => return Err(cache_err(&path, format!("line {}: {e}", i + 1))),
                }
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| cache_err(&path, e))?;
        Ok(ResponseCache {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Appends an entry; the timestamp is filled in here.
    pub fn insert(&self, mut entry: CacheEntry) -> Result<(), GatewayError> {
        entry.timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut line = serde_json::to_string(&entry).map_err(|e| cache_err(&self.path, e))?;
        line.push('\n');
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            w.write_all(line.as_bytes()).map_err(|e| cache_err(&self.path, e))?;
            w.flush().map_err(|e| cache_err(&self.path, e))?;
        }
        self.entries.write().expect("cache lock").insert(entry.key(), entry);
        Ok(())
    }
}
