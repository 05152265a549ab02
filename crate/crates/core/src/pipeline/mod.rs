//! End-to-end orchestration: configuration, per-video runs, standalone
//! evaluation, run summaries and heatmap rendering.

pub mod config;
mod record;
mod run;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_ground_truth, DatasetError};
use crate::gateway::{
    Backend, Endpoint, Gateway, GatewayOptions, HttpBackend, MockBackend, ResponseCache,
    RetryPolicy,
};
use crate::merge::AnomalousObjectSet;
use crate::metrics::{score_video, EvaluationReport, MetricsError};
use crate::verify::{emit_heatmap, HeatmapFiles, SimilarityMatrix, VerifyError};

pub use config::{Backends, Mode, Models, PipelineConfig};
pub use record::{
    CacheCounts, FrameCounts, QueryCounts, SnippetCounts, StageOutcome, StageOutcomes,
    VideoRunRecord,
};
pub use run::{default_run_id, run_pipeline, RunOptions, RunOutcome, VerificationOutput};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("video {0:?} is not in the manifest")]
    UnknownVideo(String),
    #[error("no ground truth for predicted videos: {}", .0.join(", "))]
    MissingGroundTruth(Vec<String>),
    #[error("predictions {path}: {message}")]
    Predictions { path: PathBuf, message: String },
    #[error("run directory {path}: {message}")]
    RunDir { path: PathBuf, message: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 3 for configuration and dataset problems, 1 for
    /// anything else that stopped the command.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Dataset(_)
            | PipelineError::UnknownVideo(_)
            | PipelineError::MissingGroundTruth(_)
            | PipelineError::Predictions { .. } => 3,
            _ => 1,
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("pipeline types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn endpoint(url: &Option<String>, key: &Option<String>) -> Option<Endpoint> {
    url.as_ref().map(|u| Endpoint {
        base_url: u.clone(),
        api_key: key.clone(),
    })
}

/// Backend, cache and limits as described by `config`.
pub fn build_gateway(config: &PipelineConfig) -> Result<Gateway, PipelineError> {
    let backend: Arc<dyn Backend> = if config.mode.uses_mock() {
        let dir = config.fixtures.as_ref().ok_or_else(|| {
            PipelineError::Config(format!("{} mode needs a fixtures directory", config.mode))
        })?;
        Arc::new(MockBackend::from_dir(dir, config.seed).map_err(PipelineError::Config)?)
    } else {
        let b = &config.backends;
        Arc::new(HttpBackend::new(
            endpoint(&b.chat_url, &b.chat_api_key),
            endpoint(&b.embed_url, &b.embed_api_key),
            endpoint(&b.imgsim_url, &b.imgsim_api_key),
            Duration::from_secs_f64(b.timeout_secs),
        ))
    };
    let options = GatewayOptions {
        max_concurrency: config.max_concurrency,
        rate_limit_per_sec: config.backends.rate_limit_per_sec,
        retry: RetryPolicy {
            max_attempts: config.backends.max_attempts,
            ..RetryPolicy::default()
        },
        ..GatewayOptions::default()
    };
    Ok(Gateway::new(
        backend,
        config.cache_dir.as_ref().map(ResponseCache::new),
        options,
    ))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PredictionsFile {
    Many(Vec<AnomalousObjectSet>),
    One(AnomalousObjectSet),
}

/// Reads predictions in the persisted AOS format: a JSON array of sets, a
/// single set, or a run directory whose video folders hold `aos.json`.
pub fn load_predictions(path: &Path) -> Result<Vec<AnomalousObjectSet>, PipelineError> {
    let err = |message: String| PipelineError::Predictions {
        path: path.to_path_buf(),
        message,
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path().join("aos.json")))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_predictions(&f)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let sets =
        match serde_json::from_str::<PredictionsFile>(&text).map_err(|e| err(e.to_string()))? {
            PredictionsFile::Many(v) => v,
            PredictionsFile::One(s) => vec![s],
        };
    let mut seen = HashSet::new();
    if let Some(dup) = sets.iter().find(|s| !seen.insert(s.video_id.as_str())) {
        return Err(err(format!(
            "video {} appears more than once",
            dup.video_id
        )));
    }
    Ok(sets)
}

/// Scores existing predictions without running any model stage besides
/// embeddings. Every ground-truth video is scored; those without a
/// prediction get m = 0.
pub fn evaluate_only(
    config: &PipelineConfig,
    gateway: &Gateway,
    predictions_path: &Path,
    ground_truth_path: &Path,
) -> Result<EvaluationReport, PipelineError> {
    let predictions = load_predictions(predictions_path)?;
    let gt = load_ground_truth(ground_truth_path)?;
    let known: HashSet<&str> = gt.iter().map(|g| g.video_id.as_str()).collect();
    let orphans: Vec<String> = predictions
        .iter()
        .filter(|p| !known.contains(p.video_id.as_str()))
        .map(|p| p.video_id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(PipelineError::MissingGroundTruth(orphans));
    }
    let mut sets = Vec::with_capacity(gt.len());
    for g in &gt {
        let p = predictions.iter().find(|p| p.video_id == g.video_id);
        sets.push(score_video(
            gateway,
            &config.models.embedding,
            p,
            g,
            config.max_concurrency,
        )?);
    }
    Ok(EvaluationReport::build(&sets, config.success_threshold)?)
}

fn run_dir_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::RunDir {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Every `record.json` under `run_dir`, in video-id order.
pub fn read_records(run_dir: &Path) -> Result<Vec<VideoRunRecord>, PipelineError> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| run_dir_err(run_dir, e.to_string()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path().join("record.json")))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(run_dir_err(run_dir, "no video records"));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| run_dir_err(p, e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| run_dir_err(p, format!("corrupt record: {e}")))
        })
        .collect()
}

pub fn read_report(run_dir: &Path) -> Result<Option<EvaluationReport>, PipelineError> {
    let path = run_dir.join("report.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| run_dir_err(&path, e.to_string()))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| run_dir_err(&path, format!("corrupt report: {e}")))
}

/// Human-readable overview of a finished run.
pub fn emit_run_summary(run_dir: &Path) -> Result<String, PipelineError> {
    let records = read_records(run_dir)?;
    let report = read_report(run_dir)?;
    let mut s = String::new();
    let failed = records.iter().filter(|r| r.has_failure()).count();
    let _ = writeln!(s, "Run {}", run_dir.display());
    let _ = writeln!(
        s,
        "Videos: {} ({} ok, {} with failures)",
        records.len(),
        records.len() - failed,
        failed
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<10}{:>6}{:>9}{:>8}",
        "stage", "ok", "skipped", "failed"
    );
    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    let order = ["track1", "track2", "merge", "verify", "evaluate"];
    for r in &records {
        for (stage, o) in r.stages.iter() {
            let slot = counts.entry(stage).or_default();
            slot[match o {
                StageOutcome::Ok { .. } => 0,
                StageOutcome::Skipped { .. } => 1,
                StageOutcome::Failed { .. } => 2,
            }] += 1;
        }
    }
    for stage in order {
        if let Some(c) = counts.get(stage) {
            let _ = writeln!(s, "{stage:<10}{:>6}{:>9}{:>8}", c[0], c[1], c[2]);
        }
    }
    let failures: Vec<(&str, &str, &str)> = records
        .iter()
        .flat_map(|r| {
            r.stages.iter().filter_map(move |(stage, o)| match o {
                StageOutcome::Failed { error } => {
                    Some((r.video_id.as_str(), stage, error.as_str()))
                }
                _ => None,
            })
        })
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Failures:");
        for (video, stage, error) in failures {
            let _ = writeln!(s, "  {video} {stage}: {error}");
        }
    }
    let (req, hits, misses, calls) = records.iter().fold((0, 0, 0, 0), |a, r| {
        (
            a.0 + r.cache.requests,
            a.1 + r.cache.hits,
            a.2 + r.cache.misses,
            a.3 + r.cache.backend_calls,
        )
    });
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Cache: {req} requests, {hits} hits, {misses} misses, {calls} backend calls"
    );
    let _ = writeln!(s);
    match report {
        Some(r) => {
            let _ = writeln!(s, "{:<14}Value", "Category");
            for (name, value) in r.summary_rows() {
                let _ = writeln!(s, "{name:<14}{value:.4}");
            }
            let _ = writeln!(
                s,
                "({} videos scored, success threshold {})",
                r.n_videos, r.threshold
            );
        }
        None => {
            let _ = writeln!(s, "No evaluation report (no video had ground truth).");
        }
    }
    Ok(s)
}

/// Renders `heatmap.{csv,svg}` next to each video's persisted matrix.
pub fn render_heatmaps(
    run_dir: &Path,
    videos: Option<&[String]>,
) -> Result<Vec<HeatmapFiles>, PipelineError> {
    let records = read_records(run_dir)?;
    let mut out = Vec::new();
    for r in &records {
        if videos.is_some_and(|v| !v.contains(&r.video_id)) {
            continue;
        }
        let dir = run_dir.join(&r.video_id);
        let (m, d) = (dir.join("matrix.json"), dir.join("detections.json"));
        if !m.is_file() || !d.is_file() {
            tracing::info!(video_id = %r.video_id, "no similarity matrix; skipping heatmap");
            continue;
        }
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| run_dir_err(p, e.to_string()));
        let matrix: SimilarityMatrix = serde_json::from_str(&read(&m)?)
            .map_err(|e| run_dir_err(&m, format!("corrupt matrix: {e}")))?;
        let verification: VerificationOutput = serde_json::from_str(&read(&d)?)
            .map_err(|e| run_dir_err(&d, format!("corrupt detections: {e}")))?;
        out.push(emit_heatmap(&matrix, &verification.detections, &dir)?);
    }
    if let Some(v) = videos {
        for id in v {
            if !records.iter().any(|r| &r.video_id == id) {
                return Err(PipelineError::UnknownVideo(id.clone()));
            }
        }
    }
    Ok(out)
}
