//! Benchmark ingestion: manifests, bounding boxes, ground truth captions,
//! frame sampling and snippet cropping.

mod boxes;
mod frames;
mod ground_truth;
mod manifest;
mod sampling;
mod snippet;

use std::path::PathBuf;

use thiserror::Error;

pub use boxes::{load_bounding_boxes, BoundingBox, BoxLoad};
pub use frames::{FrameImage, FrameStore};
pub use ground_truth::{load_ground_truth, GroundTruthAnnotation};
pub use manifest::{load_manifest, VideoScene};
pub use sampling::{plan_sampling, FrameRef, SamplingPlan};
pub use snippet::{
    extract_snippet, filter_snippets, filter_snippets_with, Snippet, SnippetThresholds,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed record {record}: {message}")]
    Malformed {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("{path}: duplicate video_id {video_id:?} (record {record})")]
    DuplicateVideo {
        path: PathBuf,
        video_id: String,
        record: usize,
    },
    #[error("invalid bounding box at record {record}: {message}")]
    InvalidBox { record: usize, message: String },
    #[error("cannot sample {requested} frames from a {frame_count}-frame video")]
    TooManyFrames {
        requested: usize,
        frame_count: usize,
    },
    #[error("box ({x1},{y1})-({x2},{y2}) exceeds {width}x{height} image")]
    BoxOutOfImage {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        width: u32,
        height: u32,
    },
    #[error("frame {frame_index} of {video_id} not found in {dir}")]
    MissingFrame {
        video_id: String,
        frame_index: usize,
        dir: PathBuf,
    },
    #[error("{0}: video containers are not decoded in-process; extract frames to a directory")]
    UnsupportedSource(PathBuf),
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;
