use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError};

/// Where responses are kept between calls.
///
/// The disk form holds one JSON document per key, written to a temp file and
/// renamed into place so concurrent writers never expose a torn entry.
#[derive(Debug)]
pub enum ResponseCache {
    Memory(Mutex<HashMap<String, String>>),
    Disk(PathBuf),
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    backend: String,
    model: String,
    temperature: f64,
    prompt: String,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    pub fn memory() -> Self {
        ResponseCache::Memory(Mutex::new(HashMap::new()))
    }

    /// Opens (creating if needed) a cache directory.
    pub fn disk(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache::Disk(dir))
    }

    fn entry_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<String>, BackendError> {
        match self {
            ResponseCache::Memory(map) => Ok(map.lock().expect("cache lock poisoned").get(key).cloned()),
            ResponseCache::Disk(dir) => {
                let path = Self::entry_path(dir, key);
                let raw = match fs::read(&path) {
                    Ok(raw) => raw,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(cache_err(&path, e)),
                };
                match serde_json::from_slice::<Entry>(&raw) {
                    Ok(entry) if entry.key == key => Ok(Some(entry.text)),
                    Ok(_) | Err(_) => {
                        log::warn!("ignoring unreadable cache entry {}", path.display());
                        Ok(None)
                    }
                }
            }
        }
    }

    pub fn store(
        &self,
        key: &str,
        config: &BackendConfig,
        prompt: &str,
        text: &str,
    ) -> Result<(), BackendError> {
        match self {
            ResponseCache::Memory(map) => {
                map.lock()
                    .expect("cache lock poisoned")
                    .insert(key.to_string(), text.to_string());
                Ok(())
            }
            ResponseCache::Disk(dir) => {
                let entry = Entry {
                    key: key.to_string(),
                    backend: config.kind.to_string(),
                    model: config.model_name.clone(),
                    temperature: config.temperature,
                    prompt: prompt.to_string(),
                    text: text.to_string(),
                };
                let body = serde_json::to_vec_pretty(&entry).map_err(|e| cache_err(dir, e))?;
                let tmp = dir.join(format!(
                    ".{key}.{}.{}.tmp",
                    std::process::id(),
                    TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
                ));
                let target = Self::entry_path(dir, key);
                let write = || -> io::Result<()> {
                    let mut f = fs::File::create(&tmp)?;
                    f.write_all(&body)?;
                    f.sync_all()?;
                    fs::rename(&tmp, &target)
                };
                write().map_err(|e| {
                    let _ = fs::remove_file(&tmp);
                    cache_err(&target, e)
                })
            }
        }
    }

    pub fn stats(&self) -> io::Result<CacheStats> {
        match self {
            ResponseCache::Memory(map) => {
                let map = map.lock().expect("cache lock poisoned");
                Ok(CacheStats {
                    entries: map.len(),
                    bytes: map.values().map(|v| v.len() as u64).sum(),
                })
            }
            ResponseCache::Disk(dir) => {
                let mut stats = CacheStats::default();
                for path in entry_files(dir)? {
                    stats.entries += 1;
                    stats.bytes += fs::metadata(&path)?.len();
                }
                Ok(stats)
            }
        }
    }

    /// Removes every entry; returns how many were removed.
    pub fn clear(&self) -> io::Result<usize> {
        match self {
            ResponseCache::Memory(map) => {
                let mut map = map.lock().expect("cache lock poisoned");
                let n = map.len();
                map.clear();
                Ok(n)
            }
            ResponseCache::Disk(dir) => {
                let files = entry_files(dir)?;
                for path in &files {
                    fs::remove_file(path)?;
                }
                Ok(files.len())
            }
        }
    }
}

fn entry_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_entry = path.extension().is_some_and(|e| e == "json")
            && !path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'));
        if is_entry {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
