use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result, VideoScene};

/// Pixel-space box on one frame; `x2`/`y2` are exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub video_id: String,
    #[serde(rename = "frame")]
    pub frame_index: usize,
    pub track_id: String,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    /// `video_id:frame:track`, the row key used in matrices and heatmaps.
    pub fn snippet_id(&self) -> String {
        format!("{}:{}:{}", self.video_id, self.frame_index, self.track_id)
    }
}

#[derive(Debug, Default, Clone)]
pub struct BoxLoad {
    pub boxes: Vec<BoundingBox>,
    /// Out-of-bounds records dropped in non-strict mode.
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    video_id: String,
    frame: i64,
    track_id: TrackId,
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrackId {
    Text(String),
    Number(i64),
}

/// Reads newline-delimited JSON box records.
///
/// Degenerate boxes (`x2 <= x1` or `y2 <= y1`) are always an error. Boxes
/// outside the known scene (negative coordinates, unknown video, frame past
/// `frame_count`) are an error when `strict`, otherwise dropped with a
/// warning. Pixel bounds are checked again at crop time against the image.
pub fn load_bounding_boxes(
    path: &Path,
    scenes: Option<&[VideoScene]>,
    strict: bool,
) -> Result<BoxLoad> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let frame_counts: Option<HashMap<&str, usize>> = scenes.map(|s| {
        s.iter()
            .map(|v| (v.video_id.as_str(), v.frame_count))
            .collect()
    });

    let mut out = BoxLoad::default();
    for (i, line) in text.lines().enumerate() {
        let record = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawBox = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            record,
            message: e.to_string(),
        })?;
        if raw.x2 <= raw.x1 || raw.y2 <= raw.y1 {
            return Err(DatasetError::InvalidBox {
                record,
                message: format!(
                    "degenerate box ({},{})-({},{}) requires x2 > x1 and y2 > y1",
                    raw.x1, raw.y1, raw.x2, raw.y2
                ),
            });
        }

        let mut problem = None;
        if [raw.x1, raw.y1, raw.frame].iter().any(|&v| v < 0)
            || [raw.x2, raw.y2].iter().any(|&v| v > u32::MAX as i64)
        {
            problem = Some("coordinates out of range".to_string());
        } else if let Some(counts) = &frame_counts {
            match counts.get(raw.video_id.as_str()) {
                None => problem = Some(format!("unknown video {:?}", raw.video_id)),
                Some(&n) if raw.frame as usize >= n => {
                    problem = Some(format!("frame {} beyond frame_count {n}", raw.frame))
                }
                _ => {}
            }
        }
        if let Some(message) = problem {
            if strict {
                return Err(DatasetError::InvalidBox { record, message });
            }
            tracing::warn!(record, %message, "dropping bounding box");
            out.warnings.push(format!("record {record}: {message}"));
            continue;
        }

        out.boxes.push(BoundingBox {
            video_id: raw.video_id,
            frame_index: raw.frame as usize,
            track_id: match raw.track_id {
                TrackId::Text(s) => s,
                TrackId::Number(n) => n.to_string(),
            },
            x1: raw.x1 as u32,
            y1: raw.y1 as u32,
            x2: raw.x2 as u32,
            y2: raw.y2 as u32,
        });
    }
    Ok(out)
}
