use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// One benchmark clip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoScene {
    pub video_id: String,
    pub frame_count: usize,
    pub fps: f64,
    pub frame_source: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    video_id: String,
    frame_count: usize,
    fps: RawFps,
    frame_source: PathBuf,
}

/// Frame rates appear either as plain numbers or as `"30000/1001"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawFps {
    Number(f64),
    Ratio(String),
}

impl RawFps {
    fn value(&self) -> std::result::Result<f64, String> {
        match self {
            RawFps::Number(v) => Ok(*v),
            RawFps::Ratio(s) => {
                let (num, den) = match s.split_once('/') {
                    Some((n, d)) => (n.trim(), d.trim()),
                    None => (s.trim(), "1"),
                };
                let num: f64 = num.parse().map_err(|_| format!("bad fps {s:?}"))?;
                let den: f64 = den.parse().map_err(|_| format!("bad fps {s:?}"))?;
                if den == 0.0 {
                    return Err(format!("bad fps {s:?}"));
                }
                Ok(num / den)
            }
        }
    }
}

/// Loads a JSON array of scenes. Relative `frame_source` paths are resolved
/// against the manifest's directory.
pub fn load_manifest(manifest_path: &Path) -> Result<Vec<VideoScene>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| DatasetError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let malformed = |record, message: String| DatasetError::Malformed {
        path: manifest_path.to_path_buf(),
        record,
        message,
    };
    let entries: Vec<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| malformed(0, format!("expected a JSON array: {e}")))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut scenes = Vec::with_capacity(entries.len());
    for (i, entry) in entries.into_iter().enumerate() {
        let record = i + 1;
        let raw: RawScene =
            serde_json::from_value(entry).map_err(|e| malformed(record, e.to_string()))?;
        if raw.video_id.trim().is_empty() {
            return Err(malformed(record, "empty video_id".into()));
        }
        if raw.frame_count < 1 {
            return Err(malformed(record, "frame_count must be at least 1".into()));
        }
        let fps = raw.fps.value().map_err(|m| malformed(record, m))?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(malformed(
                record,
                format!("fps must be positive, got {fps}"),
            ));
        }
        if !seen.insert(raw.video_id.clone()) {
            return Err(DatasetError::DuplicateVideo {
                path: manifest_path.to_path_buf(),
                video_id: raw.video_id,
                record,
            });
        }
        let frame_source = if raw.frame_source.is_absolute() {
            raw.frame_source
        } else {
            base.join(raw.frame_source)
        };
        scenes.push(VideoScene {
            video_id: raw.video_id,
            frame_count: raw.frame_count,
            fps,
            frame_source,
        });
    }
    Ok(scenes)
}
