//! Multi-agent vision-language hazard detection for driving scenes.
//!
//! Two independent tracks analyse each video: track 1 describes sampled
//! frames with a vision model and ranks the hazards (RHS), track 2 queries
//! the whole clip repeatedly for an object inventory (AES). The results are
//! cross-referenced into a critical object set (COS), narrowed to the
//! anomalies (AOS), localized against bounding-box snippets, and finally
//! scored against human captions with embedding cosine similarity.

pub mod dataset;
pub mod demo;
pub mod gateway;
pub mod listparse;
pub mod merge;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod prompts;
pub mod stage;
pub mod track1;
pub mod track2;
pub mod verify;

pub use dataset::{
    BoundingBox, FrameRef, GroundTruthAnnotation, SamplingPlan, Snippet, VideoScene,
};
pub use gateway::{Gateway, GatewayError};

pub use merge::{AnomalousObjectSet, CriticalObjectSet};
pub use metrics::{EvaluationReport, VideoScoreSet};
pub use pipeline::{Mode, PipelineConfig};
pub use track1::RankedHazardSet;
pub use track2::AllElementsSet;
