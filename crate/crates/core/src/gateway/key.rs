//! Canonical request form and content digests.
//!
//! Requests are reduced to a JSON value with images replaced by their pixel
//! digests, serialized with sorted keys and no whitespace, and hashed with
//! SHA-256. The canonical text is stable across processes and independent
//! of field construction order.

use std::fmt;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatRequest, EmbedRequest, ImageTextSimRequest};

/// Bumped whenever the canonical layout changes, invalidating old caches.
pub const CANONICAL_SCHEMA: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub digest: [u8; 32],
}

impl CacheKey {
    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        let digest: [u8; 32] = bytes.try_into().ok()?;
        Some(Self { digest })
    }

    pub fn of_canonical(value: &Value) -> Self {
        let text = canonical_json(value);
        Self {
            digest: Sha256::digest(text.as_bytes()).into(),
        }
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({})", self.hex())
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

/// Anything the gateway can send to a backend.
pub trait CanonicalRequest {
    fn canonical(&self) -> Value;

    fn cache_key(&self) -> CacheKey {
        CacheKey::of_canonical(&self.canonical())
    }
}

pub fn canonical_cache_key(request: &dyn CanonicalRequest) -> CacheKey {
    request.cache_key()
}

impl CanonicalRequest for ChatRequest {
    fn canonical(&self) -> Value {
        serde_json::json!({
            "kind": "chat",
            "schema": CANONICAL_SCHEMA,
            "model": self.model_tag,
            "temperature": self.temperature,
            "system": self.system_prompt,
            "user": self.user_prompt,
            "images": self.images.iter().map(|i| i.digest_hex()).collect::<Vec<_>>(),
            "sample": self.sample_index,
        })
    }
}

impl CanonicalRequest for EmbedRequest {
    fn canonical(&self) -> Value {
        serde_json::json!({
            "kind": "embed",
            "schema": CANONICAL_SCHEMA,
            "model": self.model_tag,
            "input": self.text,
        })
    }
}

impl CanonicalRequest for ImageTextSimRequest {
    fn canonical(&self) -> Value {
        serde_json::json!({
            "kind": "imgsim",
            "schema": CANONICAL_SCHEMA,
            "model": self.model_tag,
            "image": self.image.digest_hex(),
            "labels": self.labels,
        })
    }
}

/// Sorted-key, whitespace-free JSON.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}
