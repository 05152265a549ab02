//! Track 1: per-frame hazard descriptions from the vision model, ranked by
//! the language model into the ranked hazard set (RHS).

use serde::{Deserialize, Serialize};

use crate::dataset::FrameRef;
use crate::gateway::{ChatRequest, Gateway, ImagePayload};
use crate::listparse::parse_list;
use crate::parallel::map_bounded;
use crate::prompts;
use crate::stage::{chat_with_repair, StageError};

/// Vision-model output for one sampled frame. `text` is `None` when the
/// model returned nothing usable; such frames are not passed to ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDescription {
    pub frame: FrameRef,
    pub text: Option<String>,
}

impl FrameDescription {
    pub fn is_described(&self) -> bool {
        self.text.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub description: String,
}

/// Hazards ordered most hazardous first, ranks `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedHazardSet {
    pub video_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedHazardSet {
    pub fn from_descriptions(video_id: &str, descriptions: Vec<String>) -> Self {
        Self {
            video_id: video_id.to_string(),
            entries: descriptions
                .into_iter()
                .enumerate()
                .map(|(i, description)| RankedEntry {
                    rank: i + 1,
                    description,
                })
                .collect(),
        }
    }
}

pub fn describe_request(model: &str, image: &ImagePayload) -> ChatRequest {
    ChatRequest::new(None, prompts::DESCRIBE_FRAME, model).with_images(vec![image.clone()])
}

pub fn describe_frame(
    gateway: &Gateway,
    model: &str,
    frame: FrameRef,
    image: &ImagePayload,
) -> Result<FrameDescription, StageError> {
    let text = gateway.chat(&describe_request(model, image)).map_err(|e| {
        StageError::gateway(
            format!("describe frame {} of {}", frame.frame_index, frame.video_id),
            e,
        )
    })?;
    let text = text.trim();
    Ok(FrameDescription {
        frame,
        text: (!text.is_empty()).then(|| text.to_string()),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame_index: usize,
    pub error: String,
}

/// Describes every frame, skipping frames whose call fails. Results are in
/// frame order.
pub fn describe_frames(
    gateway: &Gateway,
    model: &str,
    video_id: &str,
    frames: &[(usize, ImagePayload)],
    workers: usize,
) -> (Vec<FrameDescription>, Vec<FrameFailure>) {
    let results = map_bounded(frames, workers, |_, (index, image)| {
        let frame = FrameRef {
            video_id: video_id.to_string(),
            frame_index: *index,
        };
        (*index, describe_frame(gateway, model, frame, image))
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (frame_index, r) in results {
        match r {
            Ok(d) => ok.push(d),
            Err(e) => {
                tracing::warn!(video_id, frame_index, error = %e, "skipping frame");
                failed.push(FrameFailure {
                    frame_index,
                    error: e.to_string(),
                })
            }
        }
    }
    (ok, failed)
}

pub fn rank_request(model: &str, descriptions: &[FrameDescription]) -> ChatRequest {
    let texts: Vec<&str> = descriptions
        .iter()
        .filter_map(|d| d.text.as_deref())
        .collect();
    let list = serde_json::to_string(&texts).expect("strings serialize");
    ChatRequest::new(
        Some(prompts::RANK_SYSTEM),
        prompts::render(prompts::RANK_USER, &[("descriptions", &list)]),
        model,
    )
}

pub fn rank_hazards(
    gateway: &Gateway,
    model: &str,
    video_id: &str,
    descriptions: &[FrameDescription],
) -> Result<RankedHazardSet, StageError> {
    if !descriptions.iter().any(FrameDescription::is_described) {
        return Err(StageError::EmptyInput("rank hazards"));
    }
    let items = chat_with_repair(
        gateway,
        rank_request(model, descriptions),
        "rank hazards",
        "a numbered list, one hazard per line, most hazardous first",
        parse_list,
    )?;
    Ok(RankedHazardSet::from_descriptions(video_id, items))
}
