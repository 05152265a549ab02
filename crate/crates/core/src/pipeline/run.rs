use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::record::*;
use super::{write_json, Mode, PipelineConfig, PipelineError};
use crate::dataset::{
    extract_snippet, filter_snippets_with, load_bounding_boxes, load_ground_truth, load_manifest,
    plan_sampling, BoundingBox, FrameImage, FrameStore, GroundTruthAnnotation, VideoScene,
};
use crate::gateway::{Gateway, ImagePayload};
use crate::merge::{
    cross_reference, identify_anomalies, oracle_cross_reference, AnomalousObjectSet,
    AnomalyOutcome, CriticalObjectSet, CrossReference,
};
use crate::metrics::{score_video, EvaluationReport, VideoScoreSet};
use crate::parallel::map_bounded;
use crate::stage::StageError;
use crate::track1::{describe_frames, rank_hazards, RankedHazardSet};
use crate::track2::{
    query_video_objects, select_best_list, select_best_list_fallback, AllElementsSet,
    CommaSplitExtractor, NounExtractor, ObjectList,
};
use crate::verify::{
    build_similarity_matrix, detect_with, localize_hazards, DetectionSet, HazardLocalization,
    VerifyError,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Defaults to `run-<unix seconds>`.
    pub run_id: Option<String>,
    pub videos: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub records: Vec<VideoRunRecord>,
    pub report: Option<EvaluationReport>,
}

impl RunOutcome {
    pub fn failed_videos(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.has_failure())
            .map(|r| r.video_id.as_str())
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failed_videos().is_empty() {
            0
        } else {
            2
        }
    }
}

/// Contents of `detections.json`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct VerificationOutput {
    pub percentile: f64,
    pub floor: f64,
    #[serde(flatten)]
    pub detections: DetectionSet,
    pub localization: HazardLocalization,
}

pub fn default_run_id() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("run-{secs}")
}

/// Runs every selected video through both tracks, merge, verification and
/// scoring, writing `<out_dir>/<run_id>/<video_id>/*.json` and the report.
/// Per-video failures are recorded; only setup and I/O errors abort.
pub fn run_pipeline(
    config: &PipelineConfig,
    gateway: &Gateway,
    options: &RunOptions,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let scenes = load_manifest(&config.manifest)?;
    let selected: Vec<&VideoScene> = match &options.videos {
        None => scenes.iter().collect(),
        Some(ids) => {
            let mut out = Vec::new();
            for id in ids {
                let scene = scenes
                    .iter()
                    .find(|s| &s.video_id == id)
                    .ok_or_else(|| PipelineError::UnknownVideo(id.clone()))?;
                if !out
                    .iter()
                    .any(|s: &&VideoScene| s.video_id == scene.video_id)
                {
                    out.push(scene);
                }
            }
            out
        }
    };
    let box_load = load_bounding_boxes(&config.boxes, Some(&scenes), config.strict_boxes)?;
    for w in &box_load.warnings {
        tracing::warn!("{w}");
    }
    let mut boxes: HashMap<&str, Vec<BoundingBox>> = HashMap::new();
    for b in &box_load.boxes {
        boxes
            .entry(b.video_id.as_str())
            .or_default()
            .push(b.clone());
    }
    let ground_truth = match &config.ground_truth {
        Some(p) => load_ground_truth(p)?,
        None => Vec::new(),
    };
    let gt: HashMap<&str, &GroundTruthAnnotation> = ground_truth
        .iter()
        .map(|g| (g.video_id.as_str(), g))
        .collect();

    let run_id = options.run_id.clone().unwrap_or_else(default_run_id);
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
        return Err(PipelineError::Config(format!("invalid run id {run_id:?}")));
    }
    let run_dir = config.out_dir.join(&run_id);
    create_dir(&run_dir)?;
    tracing::info!(run_dir = %run_dir.display(), videos = selected.len(), mode = %config.mode, "starting run");

    let no_boxes = Vec::new();
    let results = map_bounded(&selected, config.max_concurrency, |_, scene| {
        let ctx = VideoContext {
            config,
            scene,
            boxes: boxes.get(scene.video_id.as_str()).unwrap_or(&no_boxes),
            gt: gt.get(scene.video_id.as_str()).copied(),
            dir: run_dir.join(&scene.video_id),
        };
        let (gw, stats) = gateway.scoped();
        let r = run_video(&ctx, &gw);
        r.map(|(mut record, score)| {
            record.cache = stats.snapshot().into();
            write_json(&ctx.dir.join("record.json"), &record).map(|_| (record, score))
        })
    });

    let mut records = Vec::with_capacity(results.len());
    let mut scores = Vec::new();
    for r in results {
        let (record, score) = r??;
        records.push(record);
        scores.extend(score);
    }
    let report = if scores.is_empty() {
        tracing::info!("no video with ground truth was scored; no report written");
        None
    } else {
        let report = EvaluationReport::build(&scores, config.success_threshold)?;
        report.write(&run_dir)?;
        Some(report)
    };
    Ok(RunOutcome {
        run_dir,
        records,
        report,
    })
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

struct VideoContext<'a> {
    config: &'a PipelineConfig,
    scene: &'a VideoScene,
    boxes: &'a [BoundingBox],
    gt: Option<&'a GroundTruthAnnotation>,
    dir: PathBuf,
}

#[derive(Default)]
struct Timings(Mutex<BTreeMap<String, u64>>);

impl Timings {
    fn time<T>(&self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let ms = start.elapsed().as_millis() as u64;
        self.0
            .lock()
            .expect("timings lock")
            .insert(stage.to_string(), ms);
        out
    }

    fn into_map(self) -> BTreeMap<String, u64> {
        self.0.into_inner().expect("timings lock")
    }
}

type Frames = Vec<(usize, ImagePayload)>;

fn load_frames(store: &FrameStore, indices: &[usize], workers: usize) -> (Frames, Vec<String>) {
    let loaded = map_bounded(indices, workers, |_, &i| (i, store.load(i)));
    let mut frames = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in loaded {
        match r {
            Ok(img) => frames.push((i, ImagePayload::new(img))),
            Err(e) => errors.push(format!("frame {i}: {e}")),
        }
    }
    (frames, errors)
}

fn run_video(
    ctx: &VideoContext<'_>,
    gw: &Gateway,
) -> Result<(VideoRunRecord, Option<VideoScoreSet>), PipelineError> {
    let cfg = ctx.config;
    let video_id = ctx.scene.video_id.as_str();
    let workers = cfg.max_concurrency;
    if ctx.dir.exists() {
        std::fs::remove_dir_all(&ctx.dir).map_err(|source| PipelineError::Io {
            path: ctx.dir.clone(),
            source,
        })?;
    }
    create_dir(&ctx.dir)?;
    let timings = Timings::default();
    let mut record = VideoRunRecord {
        video_id: video_id.to_string(),
        mode: cfg.mode,
        stages: StageOutcomes {
            track1: StageOutcome::skipped("not run"),
            track2: StageOutcome::skipped("not run"),
            merge: StageOutcome::skipped("not run"),
            verify: StageOutcome::skipped("not run"),
            evaluate: None,
        },
        frames: FrameCounts::default(),
        track2_queries: QueryCounts::default(),
        snippets: SnippetCounts::default(),
        m: None,
        warnings: Vec::new(),
        cache: CacheCounts::default(),
        timings_ms: None,
    };

    // Sampled frames feed both tracks.
    let loaded = FrameStore::open(ctx.scene).and_then(|store| {
        let plan = plan_sampling(ctx.scene, cfg.n_frames)?;
        Ok((store, plan))
    });
    let (store, frames) = match loaded {
        Ok((store, plan)) => {
            record.frames.sampled = plan.indices.len();
            let (frames, errors) = load_frames(&store, &plan.indices, workers);
            record.frames.failed = errors.len();
            record.warnings.extend(errors);
            (Some(store), frames)
        }
        Err(e) => {
            let msg = format!("frames unavailable: {e}");
            record.stages.track1 = StageOutcome::failed(&msg);
            record.stages.track2 = StageOutcome::failed(&msg);
            (None, Vec::new())
        }
    };

    let mut rhs: Option<RankedHazardSet> = None;
    let mut aes: Option<AllElementsSet> = None;
    if store.is_some() {
        let (t1, t2) = std::thread::scope(|s| {
            let h1 = s.spawn(|| timings.time("track1", || track1(ctx, gw, &frames)));
            let h2 = s.spawn(|| timings.time("track2", || track2(ctx, gw, &frames)));
            (
                h1.join().expect("track 1 panicked"),
                h2.join().expect("track 2 panicked"),
            )
        });
        let (r1, counts1, warn1) = t1;
        record.frames.described = counts1.described;
        record.frames.no_description = counts1.no_description;
        record.frames.failed += counts1.failed;
        record.warnings.extend(warn1);
        match r1 {
            Ok(set) => {
                write_json(&ctx.dir.join("rhs.json"), &set)?;
                record.stages.track1 = StageOutcome::ok();
                rhs = Some(set);
            }
            Err(e) => record.stages.track1 = StageOutcome::failed(e),
        }
        let (r2, counts2, warn2) = t2;
        record.track2_queries = counts2;
        record.warnings.extend(warn2);
        match r2 {
            Ok(set) => {
                write_json(&ctx.dir.join("aes.json"), &set)?;
                record.stages.track2 = StageOutcome::ok_with(match set.selection {
                    crate::track2::Selection::Llm => "llm selection",
                    crate::track2::Selection::FallbackSelection => "fallback selection",
                });
                aes = Some(set);
            }
            Err(e) => record.stages.track2 = StageOutcome::failed(e),
        }
    }

    // Merge: COS then AOS.
    let mut cos: Option<CriticalObjectSet> = None;
    let mut predictions: Option<AnomalousObjectSet> = None;
    match (&rhs, &aes) {
        (Some(rhs), Some(aes)) => {
            let merged = timings.time("merge", || merge(ctx, gw, rhs, aes));
            match merged {
                Ok(m) => {
                    write_json(&ctx.dir.join("cos.json"), &m.cos)?;
                    if let Some(aos) = &m.aos {
                        write_json(&ctx.dir.join("aos.json"), aos)?;
                    }
                    record.stages.merge = m.outcome;
                    cos = Some(m.cos);
                    predictions = m.aos;
                }
                Err(e) => record.stages.merge = StageOutcome::failed(e),
            }
        }
        _ => {
            let missing: Vec<&str> = [("track1", rhs.is_none()), ("track2", aes.is_none())]
                .into_iter()
                .filter_map(|(n, m)| m.then_some(n))
                .collect();
            record.stages.merge =
                StageOutcome::skipped(format!("{} produced no output", missing.join(" and ")));
        }
    }

    // Verification.
    let verified = match (&cos, &store) {
        (Some(cos), Some(store)) if !cos.entries.is_empty() => timings.time("verify", || {
            verify(
                ctx,
                gw,
                store,
                &frames,
                cos,
                predictions.as_ref(),
                &mut record,
            )
        })?,
        (Some(_), _) => StageOutcome::skipped("no critical objects"),
        _ => StageOutcome::skipped("merge did not produce a critical object set"),
    };
    record.stages.verify = verified;

    // Scoring against ground truth.
    let mut score = None;
    if let Some(gt) = ctx.gt {
        let outcome = timings.time("evaluate", || {
            score_video(gw, &cfg.models.embedding, predictions.as_ref(), gt, workers)
        });
        record.stages.evaluate = Some(match outcome {
            Ok(s) => {
                record.m = Some(s.m());
                let o = if predictions.is_none() {
                    StageOutcome::ok_with("no pipeline output")
                } else {
                    StageOutcome::ok()
                };
                score = Some(s);
                o
            }
            Err(e) => StageOutcome::failed(e),
        });
    }

    if cfg.record_timings {
        record.timings_ms = Some(timings.into_map());
    }
    Ok((record, score))
}

#[derive(Default)]
struct Track1Counts {
    described: usize,
    no_description: usize,
    failed: usize,
}

fn track1(
    ctx: &VideoContext<'_>,
    gw: &Gateway,
    frames: &Frames,
) -> (
    Result<RankedHazardSet, StageError>,
    Track1Counts,
    Vec<String>,
) {
    let cfg = ctx.config;
    let video_id = ctx.scene.video_id.as_str();
    let (descriptions, failures) = describe_frames(
        gw,
        &cfg.models.frame_vlm,
        video_id,
        frames,
        cfg.max_concurrency,
    );
    let counts = Track1Counts {
        described: descriptions.iter().filter(|d| d.is_described()).count(),
        no_description: descriptions.iter().filter(|d| !d.is_described()).count(),
        failed: failures.len(),
    };
    let warnings = failures
        .iter()
        .map(|f| format!("frame {} not described: {}", f.frame_index, f.error))
        .collect();
    let result = if descriptions.is_empty() && !failures.is_empty() {
        Err(StageError::AllFailed {
            stage: "describe frames",
            failures: failures.into_iter().map(|f| f.error).collect(),
        })
    } else if frames.is_empty() {
        Err(StageError::EmptyInput("describe frames"))
    } else {
        rank_hazards(gw, &cfg.models.llm, video_id, &descriptions)
    };
    (result, counts, warnings)
}

fn track2(
    ctx: &VideoContext<'_>,
    gw: &Gateway,
    frames: &Frames,
) -> (Result<AllElementsSet, StageError>, QueryCounts, Vec<String>) {
    let cfg = ctx.config;
    let video_id = ctx.scene.video_id.as_str();
    let mut counts = QueryCounts {
        repetitions: cfg.track2_repetitions,
        ..QueryCounts::default()
    };
    if frames.is_empty() {
        return (
            Err(StageError::EmptyInput("video query")),
            counts,
            Vec::new(),
        );
    }
    let images: Vec<ImagePayload> = frames.iter().map(|(_, p)| p.clone()).collect();
    let queries = query_video_objects(
        gw,
        &cfg.models.video_vlm,
        cfg.track2_temperature,
        &images,
        cfg.track2_repetitions,
        cfg.max_concurrency,
    );
    let queries = match queries {
        Ok(q) => q,
        Err(e) => {
            counts.failed = cfg.track2_repetitions;
            return (Err(e), counts, Vec::new());
        }
    };
    counts.succeeded = queries.responses.len();
    counts.failed = queries.failures.len();
    let warnings = queries
        .failures
        .iter()
        .map(|f| format!("video query {} failed: {}", f.repetition, f.error))
        .collect();
    let extractor = CommaSplitExtractor;
    let lists: Vec<ObjectList> = queries
        .responses
        .iter()
        .map(|r| extractor.extract(r))
        .collect();
    let result = match cfg.mode {
        Mode::OfflineFallback => select_best_list_fallback(video_id, &lists),
        Mode::Live | Mode::Mock => select_best_list(gw, &cfg.models.llm, video_id, &lists),
    };
    (result, counts, warnings)
}

struct Merged {
    cos: CriticalObjectSet,
    aos: Option<AnomalousObjectSet>,
    outcome: StageOutcome,
}

fn merge(
    ctx: &VideoContext<'_>,
    gw: &Gateway,
    rhs: &RankedHazardSet,
    aes: &AllElementsSet,
) -> Result<Merged, StageError> {
    let cfg = ctx.config;
    let crossed = match cfg.mode {
        Mode::OfflineFallback => {
            let cos = oracle_cross_reference(rhs, aes);
            if cos.entries.is_empty() {
                CrossReference::NoCommonObjects
            } else {
                CrossReference::Critical(cos)
            }
        }
        Mode::Live | Mode::Mock => cross_reference(gw, &cfg.models.llm, rhs, aes)?,
    };
    let empty_aos = |warnings| AnomalousObjectSet {
        video_id: rhs.video_id.clone(),
        entries: Vec::new(),
        warnings,
    };
    let cos = match crossed {
        CrossReference::Critical(cos) => cos,
        CrossReference::NoCommonObjects => {
            return Ok(Merged {
                cos: CriticalObjectSet {
                    video_id: rhs.video_id.clone(),
                    entries: Vec::new(),
                    warnings: vec!["no common objects".into()],
                },
                aos: Some(empty_aos(vec!["no common objects".into()])),
                outcome: StageOutcome::ok_with("no common objects"),
            })
        }
    };
    match identify_anomalies(gw, &cfg.models.llm, &cos) {
        Ok(AnomalyOutcome::Anomalies(aos)) => Ok(Merged {
            cos,
            aos: Some(aos),
            outcome: StageOutcome::ok(),
        }),
        Ok(AnomalyOutcome::NoAnomaly { mut warnings }) => {
            warnings.push("no anomaly".into());
            Ok(Merged {
                cos,
                aos: Some(empty_aos(warnings)),
                outcome: StageOutcome::ok_with("no anomaly"),
            })
        }
        Err(e) => Ok(Merged {
            cos,
            aos: None,
            outcome: StageOutcome::failed(e),
        }),
    }
}

fn verify(
    ctx: &VideoContext<'_>,
    gw: &Gateway,
    store: &FrameStore,
    sampled: &Frames,
    cos: &CriticalObjectSet,
    aos: Option<&AnomalousObjectSet>,
    record: &mut VideoRunRecord,
) -> Result<StageOutcome, PipelineError> {
    let cfg = ctx.config;
    let sampled_idx: Vec<usize> = sampled.iter().map(|(i, _)| *i).collect();
    let boxes: Vec<&BoundingBox> = ctx
        .boxes
        .iter()
        .filter(|b| cfg.all_frames || sampled_idx.binary_search(&b.frame_index).is_ok())
        .collect();
    record.snippets.boxes = boxes.len();

    let mut needed: Vec<usize> = boxes.iter().map(|b| b.frame_index).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut images: BTreeMap<usize, FrameImage> = BTreeMap::new();
    let missing: Vec<usize> = needed
        .iter()
        .copied()
        .filter(|i| match sampled.iter().find(|(j, _)| j == i) {
            Some((_, p)) => {
                images.insert(*i, p.image().clone());
                false
            }
            None => true,
        })
        .collect();
    let (extra, errors) = load_frames(store, &missing, cfg.max_concurrency);
    record.warnings.extend(errors);
    images.extend(extra.into_iter().map(|(i, p)| (i, p.image().clone())));

    let mut snippets = Vec::new();
    for b in boxes {
        let Some(img) = images.get(&b.frame_index) else {
            continue;
        };
        match extract_snippet(img, b) {
            Ok(s) => snippets.push(s),
            Err(e) => record
                .warnings
                .push(format!("snippet {}: {e}", b.snippet_id())),
        }
    }
    record.snippets.extracted = snippets.len();
    let snippets = filter_snippets_with(snippets, &cfg.snippet);
    record.snippets.valid = snippets.len();

    let built = match build_similarity_matrix(
        gw,
        &cfg.models.image_text,
        &snippets,
        &cos.labels(),
        cfg.max_concurrency,
    ) {
        Ok(b) => b,
        Err(VerifyError::NoValidSnippets) => return Ok(StageOutcome::skipped("no valid snippets")),
        Err(e) => {
            if let VerifyError::AllRowsFailed(rows) = &e {
                record.snippets.failed_rows = rows.len();
            }
            return Ok(StageOutcome::failed(e));
        }
    };
    record.snippets.failed_rows = built.failed_rows.len();
    record.warnings.extend(built.warnings.iter().cloned());
    record.warnings.extend(
        built
            .failed_rows
            .iter()
            .map(|f| format!("snippet {} not scored: {}", f.row, f.error)),
    );
    let detections = detect_with(&built.matrix, cfg.percentile, cfg.detection_floor);
    let localization = match aos {
        Some(aos) => localize_hazards(&detections, aos),
        None => HazardLocalization {
            video_id: ctx.scene.video_id.clone(),
            hits: Vec::new(),
        },
    };
    write_json(&ctx.dir.join("matrix.json"), &built.matrix)?;
    let hits = localization.hits.len();
    write_json(
        &ctx.dir.join("detections.json"),
        &VerificationOutput {
            percentile: cfg.percentile,
            floor: cfg.detection_floor,
            detections,
            localization,
        },
    )?;
    Ok(if hits == 0 {
        StageOutcome::ok_with("no anomaly localized")
    } else {
        StageOutcome::ok_with(format!("{hits} localized hits"))
    })
}
