use serde::{Deserialize, Serialize};

use super::{DatasetError, Result, VideoScene};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
}

/// Evenly strided frame subset: `n_frames` indices starting at 0, `stride`
/// apart, with `stride = floor(frame_count / n_frames)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_frames: usize,
    pub stride: usize,
    pub indices: Vec<usize>,
}

pub fn plan_sampling(scene: &VideoScene, n_frames: usize) -> Result<SamplingPlan> {
    if n_frames == 0 || n_frames > scene.frame_count {
        return Err(DatasetError::TooManyFrames {
            requested: n_frames,
            frame_count: scene.frame_count,
        });
    }
    let stride = scene.frame_count / n_frames;
    let indices = (0..n_frames).map(|i| i * stride).collect();
    Ok(SamplingPlan {
        n_frames,
        stride,
        indices,
    })
}
