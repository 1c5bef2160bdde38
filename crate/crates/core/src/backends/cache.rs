use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendKind, EntailmentScore, GenerationParams, PairRequest};

/// Digest of (backend kind, model id, operation, canonical payload).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

#[derive(Serialize)]
struct KeyMaterial<'a> {
    kind: &'a str,
    model_id: &'a str,
    operation: &'a str,
    payload: &'a str,
}

impl CacheKey {
    pub fn new(kind: BackendKind, model_id: &str, operation: &str, payload: &str) -> Self {
        let material = serde_json::to_vec(&KeyMaterial {
            kind: kind.as_str(),
            model_id,
            operation,
            payload,
        })
        .expect("key material serializes");
        CacheKey(hex::encode(Sha256::digest(&material)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachedResponse {
    Score(EntailmentScore),
    Completion(String),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    response: CachedResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

/// On-disk key-value store, one JSON file per entry under `dir/<2 hex>/<key>.json`.
///
/// Writes go to a temporary file and are renamed into place, so readers (in
/// this process or another) never observe a partial entry. Writers within a
/// process are serialized.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    /// A corrupt or unreadable entry is logged and treated as a miss.
    pub fn get(&self, key: &CacheKey) -> Option<CachedResponse> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return None,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "unreadable cache entry");
                return None;
            }
        };
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == *key => Some(entry.response),
            Ok(_) => {
                tracing::warn!(path = %path.display(), "cache entry key mismatch, ignoring");
                None
            }
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "corrupt cache entry, ignoring");
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, response: &CachedResponse) -> std::io::Result<()> {
        let path = self.path_for(key);
        let body = serde_json::to_vec(&Entry {
            key: key.clone(),
            response: response.clone(),
        })
        .expect("cache entry serializes");
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            key.0,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)
    }

    fn entry_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let Ok(shards) = fs::read_dir(&self.dir) else {
            return out;
        };
        for shard in shards.flatten() {
            if !shard.path().is_dir() {
                continue;
            }
            if let Ok(files) = fs::read_dir(shard.path()) {
                out.extend(
                    files
                        .flatten()
                        .map(|f| f.path())
                        .filter(|p| p.extension().is_some_and(|e| e == "json")),
                );
            }
        }
        out
    }

    pub fn stats(&self) -> CacheStats {
        self.entry_files()
            .iter()
            .fold(CacheStats::default(), |mut acc, p| {
                acc.entries += 1;
                acc.bytes += fs::metadata(p).map(|m| m.len()).unwrap_or(0);
                acc
            })
    }

    /// Removes every entry; returns how many were removed.
    pub fn clear(&self) -> std::io::Result<u64> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let mut removed = 0;
        for path in self.entry_files() {
            fs::remove_file(&path)?;
            removed += 1;
        }
        Ok(removed)
    }
}

/// Serves repeated requests from a [`ResponseCache`] and stores fresh ones.
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        CachedBackend {
            inner,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn store(&self, key: &CacheKey, response: &CachedResponse) {
        if let Err(e) = self.cache.put(key, response) {
            tracing::warn!(error = %e, "failed to store cache entry");
        }
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        req.check()?;
        let key = CacheKey::new(
            self.inner.kind(),
            self.inner.model_id(),
            "score",
            &self.inner.score_payload(req),
        );
        if let Some(CachedResponse::Score(score)) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(score);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let score = self.inner.score(req)?;
        self.store(&key, &CachedResponse::Score(score));
        Ok(score)
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        params.check()?;
        let key = CacheKey::new(
            self.inner.kind(),
            self.inner.model_id(),
            "generate",
            &self.inner.generate_payload(prompt, params),
        );
        if let Some(CachedResponse::Completion(text)) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let text = self.inner.generate(prompt, params)?;
        self.store(&key, &CachedResponse::Completion(text.clone()));
        Ok(text)
    }

    fn score_payload(&self, req: &PairRequest<'_>) -> String {
        self.inner.score_payload(req)
    }

    fn generate_payload(&self, prompt: &str, params: &GenerationParams) -> String {
        self.inner.generate_payload(prompt, params)
    }
}
