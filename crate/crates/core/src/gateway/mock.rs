//! Deterministic fixture-driven backend for offline runs and tests.
//!
//! Chat and image-text similarity responses are looked up by the canonical
//! request digest; a request with no fixture fails with
//! [`GatewayError::Unfixtured`]. Embeddings fall back to a feature-hashing
//! construction when no fixture vector exists, so identical text always
//! embeds identically and shared words raise similarity.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{
    Backend, CacheKey, CanonicalRequest, ChatRequest, EmbedRequest, GatewayError,
    ImageTextSimRequest, Result,
};

pub const MOCK_EMBEDDING_DIMENSION: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureResponse {
    Text(String),
    Vector(Vec<f64>),
    Scores(Vec<f64>),
    Error(FixtureError),
}

/// Injected failure. With a `status` it behaves like an HTTP error
/// response, otherwise like a transport failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub message: String,
}

/// One fixture, addressed either by `key` (hex digest) or by `request`
/// (a canonical request object which is hashed on load).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(flatten)]
    pub response: FixtureResponse,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    pub fixtures: Vec<Fixture>,
}

impl FixtureFile {
    pub fn push(
        &mut self,
        request: &dyn CanonicalRequest,
        response: FixtureResponse,
        note: impl Into<String>,
    ) {
        self.fixtures.push(Fixture {
            key: Some(request.cache_key().hex()),
            request: None,
            note: Some(note.into()),
            response,
        });
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    fixtures: HashMap<CacheKey, FixtureResponse>,
    seed: u64,
    dimension: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            fixtures: HashMap::new(),
            seed,
            dimension: MOCK_EMBEDDING_DIMENSION,
        }
    }

    /// Loads every `*.json` fixture file in `dir` (in name order).
    pub fn from_dir(dir: &Path, seed: u64) -> std::result::Result<Self, String> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("cannot read fixture directory {}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut mock = Self::new(seed);
        for path in paths {
            let text =
                std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let file: FixtureFile =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            for (i, fx) in file.fixtures.into_iter().enumerate() {
                let key = match (&fx.key, &fx.request) {
                    (Some(k), _) => CacheKey::from_hex(k).ok_or_else(|| {
                        format!("{} fixture {}: bad key {k:?}", path.display(), i + 1)
                    })?,
                    (None, Some(req)) => CacheKey::of_canonical(req),
                    (None, None) => {
                        return Err(format!(
                            "{} fixture {}: needs key or request",
                            path.display(),
                            i + 1
                        ))
                    }
                };
                mock.fixtures.insert(key, fx.response);
            }
        }
        Ok(mock)
    }

    pub fn insert(&mut self, request: &dyn CanonicalRequest, response: FixtureResponse) {
        self.fixtures.insert(request.cache_key(), response);
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    fn lookup(
        &self,
        kind: &'static str,
        request: &dyn CanonicalRequest,
    ) -> Result<Option<&FixtureResponse>> {
        match self.fixtures.get(&request.cache_key()) {
            Some(FixtureResponse::Error(e)) => Err(match e.status {
                Some(status) => GatewayError::Http {
                    status,
                    body: e.message.clone(),
                },
                None => GatewayError::Transport(e.message.clone()),
            }),
            Some(other) => Ok(Some(other)),
            None if kind == "embed" => Ok(None),
            None => Err(GatewayError::Unfixtured {
                kind,
                key: request.cache_key().hex(),
            }),
        }
    }
}

fn wrong_shape(kind: &str) -> GatewayError {
    GatewayError::InvalidResponse(format!("fixture has the wrong shape for a {kind} request"))
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        match self.lookup("chat", request)? {
            Some(FixtureResponse::Text(t)) => Ok(t.clone()),
            _ => Err(wrong_shape("chat")),
        }
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<f64>> {
        match self.lookup("embed", request)? {
            Some(FixtureResponse::Vector(v)) => Ok(v.clone()),
            Some(_) => Err(wrong_shape("embed")),
            None => Ok(hashed_embedding(self.seed, self.dimension, &request.text)),
        }
    }

    fn image_text_similarity(&self, request: &ImageTextSimRequest) -> Result<Vec<f64>> {
        match self.lookup("imgsim", request)? {
            Some(FixtureResponse::Scores(s)) => Ok(s.clone()),
            _ => Err(wrong_shape("imgsim")),
        }
    }
}

fn feature(seed: u64, tag: &str, text: &str, dimension: usize) -> (usize, f64) {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    let d = h.finalize();
    let index = u64::from_le_bytes(d[..8].try_into().unwrap()) as usize % dimension;
    let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Feature-hashed bag of words. Each lowercase alphanumeric token adds ±1
/// to a hashed coordinate; the exact text adds a further ±0.5 so distinct
/// strings (including case variants) get distinct vectors. `seed` salts
/// every hash.
pub fn hashed_embedding(seed: u64, dimension: usize, text: &str) -> Vec<f64> {
    let dimension = dimension.max(2);
    let mut v = vec![0.0; dimension];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
    {
        let (i, s) = feature(seed, "tok", &token, dimension);
        v[i] += s;
    }
    let (i, s) = feature(seed, "str", text, dimension);
    v[i] += 0.5 * s;
    if v.iter().all(|&x| x == 0.0) {
        v[i] = 1.0;
    }
    v
}
