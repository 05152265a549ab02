//! Description-similarity scoring and the aggregate metrics: BESM (mean of
//! per-video max/min midpoints), SAM (mean of per-video means) and success
//! rate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroundTruthAnnotation;
use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::merge::{AnomalousObjectSet, AnomalyEntry};
use crate::parallel::map_bounded;

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.80;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no scoresets to aggregate")]
    Empty,
    #[error("video {video_id}: non-finite score {value}")]
    NonFinite { video_id: String, value: f64 },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("video {video_id}: ground truth is for {gt_video_id}")]
    VideoMismatch {
        video_id: String,
        gt_video_id: String,
    },
    #[error("video {video_id}: embedding failed: {source}")]
    Embedding {
        video_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine(a.values(), b.values())
}

/// Raw cosine scores for one video, one per predicted description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScoreSet {
    pub video_id: String,
    pub description_scores: Vec<f64>,
}

impl VideoScoreSet {
    pub fn new(video_id: impl Into<String>, description_scores: Vec<f64>) -> Self {
        Self {
            video_id: video_id.into(),
            description_scores,
        }
    }

    pub fn m(&self) -> usize {
        self.description_scores.len()
    }

    pub fn clamped_scores(&self) -> Vec<f64> {
        self.description_scores
            .iter()
            .map(|s| s.clamp(0.0, 1.0))
            .collect()
    }

    pub fn clamped_flags(&self) -> Vec<bool> {
        self.description_scores
            .iter()
            .map(|s| !(0.0..=1.0).contains(s))
            .collect()
    }

    fn check(&self) -> Result<()> {
        match self.description_scores.iter().find(|s| !s.is_finite()) {
            Some(&value) => Err(MetricsError::NonFinite {
                video_id: self.video_id.clone(),
                value,
            }),
            None => Ok(()),
        }
    }

    pub fn besm_component(&self) -> f64 {
        let s = self.clamped_scores();
        match s.len() {
            0 => 0.0,
            1 => s[0],
            _ => {
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = s.iter().copied().fold(f64::INFINITY, f64::min);
                (max + min) / 2.0
            }
        }
    }

    pub fn sam_component(&self) -> f64 {
        let s = self.clamped_scores();
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.clamped_scores().into_iter().reduce(f64::max)
    }
}

/// Text embedded for an anomaly: its description, falling back to the label.
pub fn prediction_text(entry: &AnomalyEntry) -> &str {
    if entry.description.trim().is_empty() {
        &entry.label
    } else {
        &entry.description
    }
}

/// Embeds the ground-truth description and every prediction, one score per
/// prediction in AOS order. `None` predictions (no pipeline output) give m = 0.
pub fn score_video(
    gateway: &Gateway,
    model: &str,
    predictions: Option<&AnomalousObjectSet>,
    gt: &GroundTruthAnnotation,
    workers: usize,
) -> Result<VideoScoreSet> {
    let video_id = predictions.map_or(gt.video_id.as_str(), |p| p.video_id.as_str());
    if video_id != gt.video_id {
        return Err(MetricsError::VideoMismatch {
            video_id: video_id.to_string(),
            gt_video_id: gt.video_id.clone(),
        });
    }
    let entries = predictions.map_or(&[][..], |p| p.entries.as_slice());
    if entries.is_empty() {
        return Ok(VideoScoreSet::new(video_id, vec![]));
    }
    let embedding_err = |source| MetricsError::Embedding {
        video_id: video_id.to_string(),
        source,
    };
    let reference = gateway
        .embed(model, &gt.hazard_description)
        .map_err(embedding_err)?;
    let vectors = map_bounded(entries, workers, |_, e| {
        gateway.embed(model, prediction_text(e))
    });
    let mut scores = Vec::with_capacity(entries.len());
    for v in vectors {
        scores.push(cosine_similarity(&v.map_err(embedding_err)?, &reference)?);
    }
    Ok(VideoScoreSet::new(video_id, scores))
}

fn checked(sets: &[VideoScoreSet]) -> Result<()> {
    if sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    sets.iter().try_for_each(VideoScoreSet::check)
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

pub fn besm(sets: &[VideoScoreSet]) -> Result<f64> {
    checked(sets)?;
    Ok(mean(
        sets.iter().map(VideoScoreSet::besm_component),
        sets.len(),
    ))
}

pub fn sam(sets: &[VideoScoreSet]) -> Result<f64> {
    checked(sets)?;
    Ok(mean(
        sets.iter().map(VideoScoreSet::sam_component),
        sets.len(),
    ))
}

/// Fraction of videos whose best score is strictly above `threshold`.
pub fn success_rate(sets: &[VideoScoreSet], threshold: f64) -> Result<f64> {
    checked(sets)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let hits = sets
        .iter()
        .filter(|s| s.best().is_some_and(|b| b > threshold))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    pub m: usize,
    pub scores: Vec<f64>,
    pub clamped: Vec<bool>,
    pub besm_component: f64,
    pub sam_component: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_videos: usize,
    pub besm: f64,
    pub sam: f64,
    pub success_rate: f64,
    pub threshold: f64,
    pub per_video: Vec<VideoReport>,
}

impl EvaluationReport {
    /// `scores` in the per-video block are the raw cosines; `clamped` marks
    /// the ones adjusted before aggregation.
    pub fn build(sets: &[VideoScoreSet], threshold: f64) -> Result<Self> {
        let success_rate = success_rate(sets, threshold)?;
        let per_video = sets
            .iter()
            .map(|s| VideoReport {
                video_id: s.video_id.clone(),
                m: s.m(),
                scores: s.description_scores.clone(),
                clamped: s.clamped_flags(),
                besm_component: s.besm_component(),
                sam_component: s.sam_component(),
                success: s.best().is_some_and(|b| b > threshold),
            })
            .collect();
        Ok(Self {
            n_videos: sets.len(),
            besm: besm(sets)?,
            sam: sam(sets)?,
            success_rate,
            threshold,
            per_video,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_rows(&self) -> [(&'static str, f64); 3] {
        [
            ("BESM", self.besm),
            ("SAM", self.sam),
            ("Success rate", self.success_rate),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("Category,Value\n");
        for (name, value) in self.summary_rows() {
            s.push_str(&format!("{name},{value:.4}\n"));
        }
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MetricsError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        std::fs::write(&json, self.to_json()).map_err(io(&json))?;
        std::fs::write(&csv, self.to_csv()).map_err(io(&csv))?;
        Ok((json, csv))
    }
}
