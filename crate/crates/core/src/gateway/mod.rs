//! Uniform client for chat, embedding and image-text similarity backends.
//!
//! Every call goes through the same path: validate the request, look up the
//! content-addressed cache, otherwise acquire a concurrency permit and a
//! rate-limit token and call the backend with bounded retries. Successful
//! responses are written back to the cache.

mod cache;
mod http;
mod key;
mod limit;
mod mock;

use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{Endpoint, HttpBackend};
pub use key::{canonical_cache_key, canonical_json, CacheKey, CanonicalRequest, CANONICAL_SCHEMA};
pub use limit::{ConcurrencyLimit, TokenBucket};
pub use mock::{
    hashed_embedding, Fixture, FixtureError, FixtureFile, FixtureResponse, MockBackend,
    MOCK_EMBEDDING_DIMENSION,
};

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("no backend configured for {0}")]
    NotConfigured(&'static str),
    #[error("unfixtured {kind} request {key}")]
    Unfixtured { kind: &'static str, key: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GatewayError>;

/// Decoded RGB image plus the digest of its pixels. The digest covers the
/// dimensions and raw samples only, so it does not depend on how the image
/// was encoded on disk.
#[derive(Clone)]
pub struct ImagePayload {
    image: Arc<RgbImage>,
    digest: [u8; 32],
}

impl ImagePayload {
    pub fn new(image: RgbImage) -> Self {
        let mut h = Sha256::new();
        h.update(image.width().to_le_bytes());
        h.update(image.height().to_le_bytes());
        h.update(image.as_raw());
        Self {
            digest: h.finalize().into(),
            image: Arc::new(image),
        }
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.image
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        buf.into_inner()
    }

    pub fn to_base64_png(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_png())
    }
}

impl std::fmt::Debug for ImagePayload {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ImagePayload({}x{}, {})",
            self.image.width(),
            self.image.height(),
            &self.digest_hex()[..12]
        )
    }
}

/// Images are not part of the serialized form; requests that carry images
/// are built in code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub system_prompt: Option<String>,
    pub user_prompt: String,
    #[serde(skip)]
    pub images: Vec<ImagePayload>,
    pub temperature: f64,
    pub model_tag: String,
    /// Distinguishes repeated identical queries, e.g. the repetitions of a
    /// video query. Cache and fixture keys include it; the wire body does not.
    #[serde(default)]
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn new(
        system_prompt: Option<&str>,
        user_prompt: impl Into<String>,
        model_tag: &str,
    ) -> Self {
        Self {
            system_prompt: system_prompt.map(str::to_string),
            user_prompt: user_prompt.into(),
            images: Vec::new(),
            temperature: 0.0,
            model_tag: model_tag.to_string(),
            sample_index: 0,
        }
    }

    pub fn with_images(mut self, images: Vec<ImagePayload>) -> Self {
        self.images = images;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_sample_index(mut self, i: u32) -> Self {
        self.sample_index = i;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty user prompt".into()));
        }
        if self
            .system_prompt
            .as_deref()
            .is_some_and(|s| s.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest("empty system prompt".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model_tag: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct ImageTextSimRequest {
    pub image: ImagePayload,
    pub labels: Vec<String>,
    pub model_tag: String,
}

impl ImageTextSimRequest {
    fn validate(&self) -> Result<()> {
        if self.labels.is_empty() || self.labels.iter().any(|l| l.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(
                "labels must be non-empty strings".into(),
            ));
        }
        Ok(())
    }
}

/// Validated embedding: at least two finite components, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(GatewayError::InvalidResponse(format!(
                "embedding dimension {} < 2",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::InvalidResponse(
                "non-finite embedding component".into(),
            ));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(GatewayError::InvalidResponse("all-zero embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Scores after clamping into [0, 1]; `clamped[i]` marks adjusted entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTextScores {
    pub scores: Vec<f64>,
    pub clamped: Vec<bool>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<String>;
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<f64>>;
    fn image_text_similarity(&self, request: &ImageTextSimRequest) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 250,
            max_backoff_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .base_backoff_ms
            .saturating_mul(1 << attempt.saturating_sub(1).min(16));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayOptions {
    pub max_concurrency: usize,
    pub rate_limit_per_sec: Option<f64>,
    pub burst: u32,
    pub retry: RetryPolicy,
    /// Expected embedding dimension; responses of another size are rejected.
    pub embedding_dimension: Option<usize>,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            max_concurrency: 4,
            rate_limit_per_sec: None,
            burst: 1,
            retry: RetryPolicy::default(),
            embedding_dimension: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub requests: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
    pub backend_calls: AtomicU64,
    pub retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub requests: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub backend_calls: u64,
    pub retries: u64,
}

impl GatewayStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            cache_misses: self.cache_misses.load(Ordering::Relaxed),
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }
}

struct Inner {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    options: GatewayOptions,
    limit: ConcurrencyLimit,
    bucket: Option<TokenBucket>,
    stats: GatewayStats,
}

/// Cheap to clone; clones share limits, cache and global statistics.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
    scope: Option<Arc<GatewayStats>>,
}

#[derive(Serialize, Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct VectorResponse {
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoresResponse {
    scores: Vec<f64>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        cache: Option<ResponseCache>,
        options: GatewayOptions,
    ) -> Self {
        let bucket = options
            .rate_limit_per_sec
            .filter(|r| *r > 0.0)
            .map(|r| TokenBucket::new(r, options.burst));
        Self {
            inner: Arc::new(Inner {
                backend,
                cache,
                limit: ConcurrencyLimit::new(options.max_concurrency),
                bucket,
                options,
                stats: GatewayStats::default(),
            }),
            scope: None,
        }
    }

    /// A handle whose calls are additionally counted in a fresh stats sink.
    pub fn scoped(&self) -> (Gateway, Arc<GatewayStats>) {
        let stats = Arc::new(GatewayStats::default());
        (
            Gateway {
                inner: Arc::clone(&self.inner),
                scope: Some(Arc::clone(&stats)),
            },
            stats,
        )
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.inner.stats.snapshot()
    }

    pub fn backend_name(&self) -> &str {
        self.inner.backend.name()
    }

    fn bump(&self, f: impl Fn(&GatewayStats) -> &AtomicU64) {
        f(&self.inner.stats).fetch_add(1, Ordering::Relaxed);
        if let Some(s) = &self.scope {
            f(s).fetch_add(1, Ordering::Relaxed);
        }
    }

    fn call<T, F>(&self, request: &dyn CanonicalRequest, backend_call: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: Fn() -> Result<T>,
    {
        self.bump(|s| &s.requests);
        let canonical = request.canonical();
        let key = CacheKey::of_canonical(&canonical);
        if let Some(cache) = &self.inner.cache {
            if let Some(entry) = cache.get(&key) {
                if let Ok(value) = serde_json::from_value::<T>(entry.response) {
                    self.bump(|s| &s.cache_hits);
                    return Ok(value);
                }
            }
            self.bump(|s| &s.cache_misses);
        }

        let response = self.call_with_retries(&backend_call)?;

        if let Some(cache) = &self.inner.cache {
            let value = serde_json::to_value(&response).unwrap_or(Value::Null);
            if let Err(e) = cache.put(&key, canonical, value) {
                tracing::warn!(key = %key, error = %e, "cache write failed");
            }
        }
        Ok(response)
    }

    fn call_with_retries<T>(&self, backend_call: &dyn Fn() -> Result<T>) -> Result<T> {
        let policy = self.inner.options.retry;
        let max_attempts = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.inner.limit.acquire();
                if let Some(bucket) = &self.inner.bucket {
                    bucket.take();
                }
                self.bump(|s| &s.backend_calls);
                backend_call()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if attempt >= max_attempts {
                        return Err(GatewayError::RetriesExhausted {
                            attempts: attempt,
                            last: Box::new(e),
                        });
                    }
                    self.bump(|s| &s.retries);
                    tracing::debug!(attempt, error = %e, "retrying backend call");
                    std::thread::sleep(policy.backoff(attempt));
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Text completion, returned verbatim.
    pub fn chat(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let backend = &self.inner.backend;
        let r: TextResponse = self.call(request, || {
            backend.chat(request).map(|text| TextResponse { text })
        })?;
        Ok(r.text)
    }

    pub fn embed(&self, model_tag: &str, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "cannot embed empty text".into(),
            ));
        }
        let request = EmbedRequest {
            model_tag: model_tag.to_string(),
            text: text.to_string(),
        };
        let backend = &self.inner.backend;
        let r: VectorResponse = self.call(&request, || {
            backend
                .embed(&request)
                .map(|vector| VectorResponse { vector })
        })?;
        if let Some(expected) = self.inner.options.embedding_dimension {
            if r.vector.len() != expected {
                return Err(GatewayError::InvalidResponse(format!(
                    "embedding dimension {} differs from declared {expected}",
                    r.vector.len()
                )));
            }
        }
        EmbeddingVector::new(r.vector)
    }

    pub fn image_text_similarity(&self, request: &ImageTextSimRequest) -> Result<ImageTextScores> {
        request.validate()?;
        let backend = &self.inner.backend;
        let r: ScoresResponse = self.call(request, || {
            backend
                .image_text_similarity(request)
                .map(|scores| ScoresResponse { scores })
        })?;
        if r.scores.len() != request.labels.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "{} scores for {} labels",
                r.scores.len(),
                request.labels.len()
            )));
        }
        let mut scores = Vec::with_capacity(r.scores.len());
        let mut clamped = Vec::with_capacity(r.scores.len());
        for (label, s) in request.labels.iter().zip(r.scores) {
            if s.is_nan() {
                return Err(GatewayError::InvalidResponse(format!(
                    "NaN score for label {label:?}"
                )));
            }
            let c = s.clamp(0.0, 1.0);
            if c != s {
                tracing::warn!(label = %label, raw = s, "similarity score outside [0, 1] clamped");
            }
            clamped.push(c != s);
            scores.push(c);
        }
        Ok(ImageTextScores { scores, clamped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    /// Counts calls and fails the first `fail_first` of them with HTTP 500.
    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
        scores: Vec<f64>,
    }

    impl Backend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn chat(&self, r: &ChatRequest) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(GatewayError::Http {
                    status: 500,
                    body: "oops".into(),
                });
            }
            Ok(format!("echo {}", r.user_prompt))
        }
        fn embed(&self, r: &EmbedRequest) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(vec![r.text.len() as f64, 1.0, 0.0])
        }
        fn image_text_similarity(&self, _: &ImageTextSimRequest) -> Result<Vec<f64>> {
            Ok(self.scores.clone())
        }
    }

    fn flaky(fail_first: u32) -> Arc<Flaky> {
        Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first,
            scores: vec![1.3, 0.4, -0.1],
        })
    }

    fn fast() -> GatewayOptions {
        GatewayOptions {
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 0,
                max_backoff_ms: 0,
            },
            ..GatewayOptions::default()
        }
    }

    #[test]
    fn exhausts_after_three_server_errors() {
        let b = flaky(3);
        let gw = Gateway::new(b.clone(), None, fast());
        match gw.chat(&ChatRequest::new(None, "hi", "m")) {
            Err(GatewayError::RetriesExhausted { attempts: 3, last }) => {
                assert!(matches!(*last, GatewayError::Http { status: 500, .. }))
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_within_budget() {
        let b = flaky(2);
        let gw = Gateway::new(b.clone(), None, fast());
        assert_eq!(
            gw.chat(&ChatRequest::new(None, "hi", "m")).unwrap(),
            "echo hi"
        );
        assert_eq!(gw.stats().retries, 2);
    }

    #[test]
    fn cache_hit_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let b = flaky(0);
        let gw = Gateway::new(b.clone(), Some(ResponseCache::new(dir.path())), fast());
        let req = ChatRequest::new(Some("sys"), "hi", "m");
        let first = gw.chat(&req).unwrap();
        let second = gw.chat(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
        let s = gw.stats();
        assert_eq!((s.cache_hits, s.cache_misses), (1, 1));
    }

    #[test]
    fn scores_are_clamped_and_flagged() {
        let gw = Gateway::new(flaky(0), None, fast());
        let req = ImageTextSimRequest {
            image: ImagePayload::new(RgbImage::new(2, 2)),
            labels: vec!["a".into(), "b".into(), "c".into()],
            model_tag: "clip".into(),
        };
        let r = gw.image_text_similarity(&req).unwrap();
        assert_eq!(r.scores, vec![1.0, 0.4, 0.0]);
        assert_eq!(r.clamped, vec![true, false, true]);
    }

    #[test]
    fn score_count_mismatch() {
        let gw = Gateway::new(flaky(0), None, fast());
        let req = ImageTextSimRequest {
            image: ImagePayload::new(RgbImage::new(2, 2)),
            labels: vec!["a".into()],
            model_tag: "clip".into(),
        };
        assert!(matches!(
            gw.image_text_similarity(&req),
            Err(GatewayError::InvalidResponse(_))
        ));
    }

    #[test]
    fn embedding_preconditions() {
        let mut opts = fast();
        opts.embedding_dimension = Some(4);
        let gw = Gateway::new(flaky(0), None, opts);
        assert!(matches!(
            gw.embed("m", ""),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(matches!(
            gw.embed("m", "cat"),
            Err(GatewayError::InvalidResponse(_))
        ));
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(flaky(0), None, fast());
        assert!(gw.chat(&ChatRequest::new(None, "  ", "m")).is_err());
        assert!(gw.chat(&ChatRequest::new(Some(""), "x", "m")).is_err());
        assert!(gw
            .chat(&ChatRequest::new(None, "x", "m").with_temperature(f64::NAN))
            .is_err());
    }

    #[test]
    fn scoped_stats_are_separate() {
        let gw = Gateway::new(flaky(0), None, fast());
        let (scoped, stats) = gw.scoped();
        scoped.chat(&ChatRequest::new(None, "a", "m")).unwrap();
        gw.chat(&ChatRequest::new(None, "b", "m")).unwrap();
        assert_eq!(stats.snapshot().requests, 1);
        assert_eq!(gw.stats().requests, 2);
    }
}
