//! Dense sentence vectors behind a provider contract, with a persistent
//! content-addressed cache.
//!
//! The built-in provider is a signed feature-hashing embedder (`hash-v1`): a
//! deterministic bag-of-words stand-in for a sentence encoder. Remote encoders
//! are reached over a small JSON batch endpoint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;
use crate::lexicon::StopWords;
use crate::text::tokenize_normalize;

pub const HASH_PROVIDER_ID: &str = "hash-v1";
pub const HASH_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider mismatch: `{0}` vs `{1}`")]
    ProviderMismatch(String, String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub provider_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; an all-zero vector stays zero.
    pub fn normalized(provider_id: impl Into<String>, mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self {
            provider_id: provider_id.into(),
            dim: values.len(),
            values,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub fn hash_embed(text: &str, stopwords: &StopWords) -> EmbeddingVector {
    let mut values = vec![0.0; HASH_DIM];
    for token in tokenize_normalize(text, stopwords).iter() {
        let h = fnv1a64(token);
        let bucket = (h % HASH_DIM as u64) as usize;
        let sign = if (h >> 8) & 1 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    EmbeddingVector::normalized(HASH_PROVIDER_ID, values)
}

/// A source of raw (not necessarily normalized) sentence vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// One vector per input, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    stopwords: StopWords,
}

impl HashEmbedder {
    pub fn new(stopwords: StopWords) -> Self {
        Self { stopwords }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        HASH_PROVIDER_ID
    }

    fn dim(&self) -> usize {
        HASH_DIM
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| hash_embed(t, &self.stopwords).values)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    pub url: String,
    pub model: String,
    pub dim: usize,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_retries() -> u32 {
    2
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for the JSON batch embedding endpoint:
/// `POST {"model", "inputs"}` → `{"vectors"}`.
pub struct RemoteEmbedder {
    config: RemoteEmbeddingConfig,
    provider_id: String,
    agent: ureq::Agent,
    token: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbeddingConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = config
            .credential_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        Self {
            provider_id: format!("remote:{}", config.model),
            config,
            agent,
            token,
        }
    }

    fn call_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(EmbedRequest {
                model: &self.config.model,
                inputs: texts,
            })
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        let status = resp.status();
        if status != 200 {
            return Err(EmbedError::ProviderUnavailable(format!("HTTP {}", status.as_u16())));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::ProviderUnavailable(format!("malformed response: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut attempt = 0;
        loop {
            match self.call_once(texts) {
                Err(EmbedError::ProviderUnavailable(detail)) if attempt < self.config.retries => {
                    tracing::warn!(attempt, %detail, "embedding call failed, retrying");
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }
}

/// Whitespace-collapsed, trimmed text; the cache and providers see this form.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub text: String,
    pub vector: EmbeddingVector,
    pub created_at: DateTime<Utc>,
}

pub fn cache_key(provider_id: &str, normalized: &str) -> String {
    let mut h = Sha256::new();
    h.update(provider_id.as_bytes());
    h.update([0u8]);
    h.update(normalized.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Embedding cache with concurrent readers and serialized writers.
///
/// When backed by a file, entries are appended as JSON lines; a torn final
/// line from an interrupted write is skipped on load.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    file: Option<Mutex<(PathBuf, File)>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| EmbedError::Cache {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            for line in reader.lines() {
                let line = line.map_err(io_err)?;
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key.clone(), entry);
                    }
                    Err(e) => tracing::warn!(error = %e, "skipping unreadable cache line"),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new((path, file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn get(&self, provider_id: &str, normalized: &str) -> Option<EmbeddingVector> {
        let key = cache_key(provider_id, normalized);
        let entries = self.entries.read();
        entries
            .get(&key)
            .filter(|e| e.text == normalized && e.vector.provider_id == provider_id)
            .map(|e| e.vector.clone())
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<(), EmbedError> {
        if let Some(file) = &self.file {
            let mut guard = file.lock();
            let (path, f) = &mut *guard;
            let mut line = serde_json::to_string(&entry).expect("cache entries serialize");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|()| f.flush())
                .map_err(|source| EmbedError::Cache {
                    path: path.clone(),
                    source,
                })?;
            self.entries.write().insert(entry.key.clone(), entry);
        } else {
            self.entries.write().insert(entry.key.clone(), entry);
        }
        Ok(())
    }
}

/// Provider + cache, with observable provider-call and cache-hit counts.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Arc<EmbeddingCache>,
    clock: Clock,
    batch_size: usize,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, cache: Arc<EmbeddingCache>, clock: Clock) -> Self {
        Self {
            provider,
            cache,
            clock,
            batch_size: 32,
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Hash embedder with an in-memory cache.
    pub fn hashing(stopwords: StopWords) -> Self {
        Self::new(
            Arc::new(HashEmbedder::new(stopwords)),
            Arc::new(EmbeddingCache::in_memory()),
            Clock::System,
        )
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_many(&[text])?;
        Ok(out.pop().expect("one vector per input"))
    }

    /// Embeds many texts, batching cache misses into provider calls.
    pub fn embed_many<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let provider_id = self.provider.id().to_string();
        let normalized: Vec<String> = texts.iter().map(|t| normalize_text(t.as_ref())).collect();
        if normalized.iter().any(String::is_empty) {
            return Err(EmbedError::EmptyText);
        }

        let mut out: Vec<Option<EmbeddingVector>> = Vec::with_capacity(texts.len());
        let mut misses: Vec<String> = Vec::new();
        for n in &normalized {
            match self.cache.get(&provider_id, n) {
                Some(v) => {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    out.push(Some(v));
                }
                None => {
                    if !misses.contains(n) {
                        misses.push(n.clone());
                    }
                    out.push(None);
                }
            }
        }

        let mut fresh: HashMap<String, EmbeddingVector> = HashMap::new();
        for batch in misses.chunks(self.batch_size) {
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            let raw = self.provider.embed_batch(batch)?;
            if raw.len() != batch.len() {
                return Err(EmbedError::ProviderUnavailable(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    raw.len()
                )));
            }
            for (text, values) in batch.iter().zip(raw) {
                if values.len() != self.provider.dim() {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.provider.dim(),
                        got: values.len(),
                    });
                }
                let vector = EmbeddingVector::normalized(provider_id.clone(), values);
                self.cache.insert(CacheEntry {
                    key: cache_key(&provider_id, text),
                    text: text.clone(),
                    vector: vector.clone(),
                    created_at: self.clock.now(),
                })?;
                fresh.insert(text.clone(), vector);
            }
        }

        Ok(out
            .into_iter()
            .zip(&normalized)
            .map(|(v, n)| v.unwrap_or_else(|| fresh[n].clone()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Counting {
        inner: HashEmbedder,
        dim: usize,
        calls: AtomicU64,
    }

    impl EmbeddingProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        fn dim(&self) -> usize {
            self.dim
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.embed_batch(texts)
        }
    }

    fn counting(dim: usize) -> Arc<Counting> {
        Arc::new(Counting {
            inner: HashEmbedder::new(StopWords::default_stopwords()),
            dim,
            calls: AtomicU64::new(0),
        })
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn second_embed_hits_cache() {
        let provider = counting(HASH_DIM);
        let e = Embedder::new(provider.clone(), Arc::new(EmbeddingCache::in_memory()), Clock::System);
        let a = e.embed("The account is locked").unwrap();
        let b = e.embed("The  account is locked ").unwrap();
        assert_eq!(a, b);
        assert_eq!(provider.calls.load(Ordering::Relaxed), 1);
        assert_eq!(e.provider_calls(), 1);
        assert_eq!(e.cache_hits(), 1);
    }

    #[test]
    fn empty_text_rejected() {
        let e = Embedder::hashing(StopWords::default_stopwords());
        assert!(matches!(e.embed(""), Err(EmbedError::EmptyText)));
        assert!(matches!(e.embed("   "), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn dimension_mismatch() {
        struct Wrong;
        impl EmbeddingProvider for Wrong {
            fn id(&self) -> &str {
                "wrong"
            }
            fn dim(&self) -> usize {
                256
            }
            fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
                Ok(texts.iter().map(|_| vec![1.0; 384]).collect())
            }
        }
        let e = Embedder::new(Arc::new(Wrong), Arc::new(EmbeddingCache::in_memory()), Clock::System);
        assert!(matches!(
            e.embed("x"),
            Err(EmbedError::DimensionMismatch { expected: 256, got: 384 })
        ));
    }

    #[test]
    fn hash_embed_properties() {
        let stop = StopWords::default_stopwords();
        let a = hash_embed("account locked", &stop);
        assert_eq!(a, hash_embed("locked account", &stop));
        assert_eq!(a.provider_id, HASH_PROVIDER_ID);
        assert_eq!(a.dim, HASH_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(hash_embed("the and of", &stop).is_zero());
    }

    #[test]
    fn batches_respect_size() {
        let provider = counting(HASH_DIM);
        let e = Embedder::new(provider.clone(), Arc::new(EmbeddingCache::in_memory()), Clock::System)
            .with_batch_size(2);
        let texts = ["a1", "b2", "c3", "a1", "d4", "e5"];
        let vs = e.embed_many(&texts).unwrap();
        assert_eq!(vs[0], vs[3]);
        assert_eq!(provider.calls.load(Ordering::Relaxed), 3);
    }

    #[test]
    fn cache_persists_and_survives_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let first = {
            let cache = Arc::new(EmbeddingCache::open(&path).unwrap());
            let e = Embedder::new(counting(HASH_DIM), cache, Clock::System);
            e.embed("persist me please").unwrap()
        };
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"key\":\"tor")
            .unwrap();
        let provider = counting(HASH_DIM);
        let cache = Arc::new(EmbeddingCache::open(&path).unwrap());
        assert_eq!(cache.len(), 1);
        let e = Embedder::new(provider.clone(), cache, Clock::System);
        assert_eq!(e.embed("persist me please").unwrap(), first);
        assert_eq!(provider.calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn concurrent_embedding_matches_sequential() {
        let e = Arc::new(Embedder::hashing(StopWords::default_stopwords()));
        let texts: Vec<String> = (0..40).map(|i| format!("token{} shared word{}", i % 7, i)).collect();
        let expected: Vec<_> = texts
            .iter()
            .map(|t| {
                let raw = hash_embed(&normalize_text(t), &StopWords::default_stopwords());
                EmbeddingVector::normalized(HASH_PROVIDER_ID, raw.values)
            })
            .collect();
        std::thread::scope(|s| {
            for chunk in texts.chunks(10) {
                let e = e.clone();
                s.spawn(move || e.embed_many(chunk).unwrap());
            }
        });
        assert_eq!(e.embed_many(&texts).unwrap(), expected);
    }

    proptest! {
        #[test]
        fn cached_equals_uncached(seq in prop::collection::vec("[a-d]{1,3}( [a-d]{1,3}){0,3}", 1..30)) {
            let cached = Embedder::hashing(StopWords::default_stopwords());
            let stop = StopWords::default_stopwords();
            for t in &seq {
                let got = cached.embed(t).unwrap();
                let fresh = EmbeddingVector::normalized(HASH_PROVIDER_ID, hash_embed(&normalize_text(t), &stop).values);
                prop_assert_eq!(got, fresh);
            }
        }

        #[test]
        fn nonzero_vectors_have_unit_norm(text in "[a-zA-Z ]{0,60}") {
            let v = hash_embed(&text, &StopWords::default_stopwords());
            prop_assert!(v.is_zero() || (v.norm() - 1.0).abs() <= 1e-9);
        }
    }
}
