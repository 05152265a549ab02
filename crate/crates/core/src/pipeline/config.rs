//! Run configuration: a TOML file (relative paths resolved against the
//! file's directory), environment variables for backend endpoints, and
//! command-line overrides applied last.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::SnippetThresholds;
use crate::metrics::DEFAULT_SUCCESS_THRESHOLD;
use crate::track2::{DEFAULT_REPETITIONS, DEFAULT_VIDEO_TEMPERATURE};
use crate::verify::DEFAULT_PERCENTILE;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Live,
    #[default]
    Mock,
    /// Mock backend, with best-list selection and cross-referencing done
    /// locally instead of through the LLM.
    OfflineFallback,
}

impl Mode {
    pub fn uses_mock(self) -> bool {
        !matches!(self, Mode::Live)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Mock => "mock",
            Mode::OfflineFallback => "offline-fallback",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(Mode::Live),
            "mock" => Ok(Mode::Mock),
            "offline-fallback" => Ok(Mode::OfflineFallback),
            other => Err(format!(
                "unknown mode {other:?} (expected live, mock or offline-fallback)"
            )),
        }
    }
}

/// Model tags sent with each request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub frame_vlm: String,
    pub video_vlm: String,
    pub llm: String,
    pub embedding: String,
    pub image_text: String,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            frame_vlm: "omnivlm".into(),
            video_vlm: "vila".into(),
            llm: "gpt-4o-mini".into(),
            embedding: "text-embedding".into(),
            image_text: "clip".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub chat_url: Option<String>,
    pub chat_api_key: Option<String>,
    pub embed_url: Option<String>,
    pub embed_api_key: Option<String>,
    pub imgsim_url: Option<String>,
    pub imgsim_api_key: Option<String>,
    pub timeout_secs: f64,
    pub rate_limit_per_sec: Option<f64>,
    pub max_attempts: u32,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            chat_url: None,
            chat_api_key: None,
            embed_url: None,
            embed_api_key: None,
            imgsim_url: None,
            imgsim_api_key: None,
            timeout_secs: 120.0,
            rate_limit_per_sec: None,
            max_attempts: 3,
        }
    }
}

pub const ENV_VARS: [&str; 6] = [
    "HAZARD_CHAT_URL",
    "HAZARD_CHAT_API_KEY",
    "HAZARD_EMBED_URL",
    "HAZARD_EMBED_API_KEY",
    "HAZARD_IMGSIM_URL",
    "HAZARD_IMGSIM_API_KEY",
];

impl Backends {
    /// Fills unset endpoints from `HAZARD_*` variables; values already in
    /// the config file are kept.
    pub fn fill_from(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let slots = [
            &mut self.chat_url,
            &mut self.chat_api_key,
            &mut self.embed_url,
            &mut self.embed_api_key,
            &mut self.imgsim_url,
            &mut self.imgsim_api_key,
        ];
        for (slot, var) in slots.into_iter().zip(ENV_VARS) {
            if slot.is_none() {
                *slot = lookup(var).filter(|v| !v.is_empty());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub boxes: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Mock fixture directory; required by the mock modes.
    pub fixtures: Option<PathBuf>,
    pub mode: Mode,
    pub seed: u64,
    pub n_frames: usize,
    /// Take snippets from every frame with boxes, not only sampled ones.
    pub all_frames: bool,
    pub track2_repetitions: usize,
    pub track2_temperature: f64,
    pub snippet: SnippetThresholds,
    pub percentile: f64,
    pub detection_floor: f64,
    pub success_threshold: f64,
    pub max_concurrency: usize,
    /// Reject box records that reference unknown videos or frames.
    pub strict_boxes: bool,
    /// Adds wall-clock stage timings to record.json (makes runs differ).
    pub record_timings: bool,
    pub models: Models,
    pub backends: Backends,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            boxes: PathBuf::from("boxes.ndjson"),
            ground_truth: None,
            cache_dir: None,
            out_dir: PathBuf::from("runs"),
            fixtures: None,
            mode: Mode::default(),
            seed: 0,
            n_frames: 25,
            all_frames: false,
            track2_repetitions: DEFAULT_REPETITIONS,
            track2_temperature: DEFAULT_VIDEO_TEMPERATURE,
            snippet: SnippetThresholds::default(),
            percentile: DEFAULT_PERCENTILE,
            detection_floor: 0.0,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            max_concurrency: 4,
            strict_boxes: false,
            record_timings: false,
            models: Models::default(),
            backends: Backends::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.manifest);
        resolve(base, &mut self.boxes);
        resolve(base, &mut self.out_dir);
        for p in [
            &mut self.ground_truth,
            &mut self.cache_dir,
            &mut self.fixtures,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if self.track2_repetitions == 0 {
            return bad("track2_repetitions must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.track2_temperature) {
            return bad(format!(
                "track2_temperature {} outside [0, 2]",
                self.track2_temperature
            ));
        }
        let s = &self.snippet;
        if s.min_width == 0 || s.min_height == 0 || s.min_area_exclusive == 0 {
            return bad("snippet thresholds must be positive".into());
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return bad(format!("percentile {} outside (0, 1)", self.percentile));
        }
        if !(0.0..=1.0).contains(&self.detection_floor) {
            return bad(format!(
                "detection_floor {} outside [0, 1]",
                self.detection_floor
            ));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return bad(format!(
                "success_threshold {} outside [0, 1]",
                self.success_threshold
            ));
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be at least 1".into());
        }
        if !(self.backends.timeout_secs.is_finite() && self.backends.timeout_secs > 0.0) {
            return bad("backends.timeout_secs must be positive".into());
        }
        if self.backends.max_attempts == 0 {
            return bad("backends.max_attempts must be at least 1".into());
        }
        match self.mode {
            Mode::Live => {
                let b = &self.backends;
                for (name, url) in [
                    ("chat_url", &b.chat_url),
                    ("embed_url", &b.embed_url),
                    ("imgsim_url", &b.imgsim_url),
                ] {
                    if url.is_none() {
                        return bad(format!(
                            "live mode needs backends.{name} (or its HAZARD_* variable)"
                        ));
                    }
                }
            }
            Mode::Mock | Mode::OfflineFallback => {
                if self.fixtures.is_none() {
                    return bad(format!("{} mode needs a fixtures directory", self.mode));
                }
            }
        }
        Ok(())
    }
}
