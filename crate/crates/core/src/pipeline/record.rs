use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::gateway::StatsSnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageOutcome {
    Ok {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Skipped {
        reason: String,
    },
    Failed {
        error: String,
    },
}

impl StageOutcome {
    pub fn ok() -> Self {
        StageOutcome::Ok { detail: None }
    }

    pub fn ok_with(detail: impl Into<String>) -> Self {
        StageOutcome::Ok {
            detail: Some(detail.into()),
        }
    }

    pub fn skipped(reason: impl Into<String>) -> Self {
        StageOutcome::Skipped {
            reason: reason.into(),
        }
    }

    pub fn failed(error: impl ToString) -> Self {
        StageOutcome::Failed {
            error: error.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, StageOutcome::Ok { .. })
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, StageOutcome::Failed { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            StageOutcome::Ok { .. } => "ok",
            StageOutcome::Skipped { .. } => "skipped",
            StageOutcome::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcomes {
    pub track1: StageOutcome,
    pub track2: StageOutcome,
    pub merge: StageOutcome,
    pub verify: StageOutcome,
    /// Present only for videos with a ground-truth row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<StageOutcome>,
}

impl StageOutcomes {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &StageOutcome)> {
        [
            ("track1", Some(&self.track1)),
            ("track2", Some(&self.track2)),
            ("merge", Some(&self.merge)),
            ("verify", Some(&self.verify)),
            ("evaluate", self.evaluate.as_ref()),
        ]
        .into_iter()
        .filter_map(|(n, o)| o.map(|o| (n, o)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub sampled: usize,
    pub described: usize,
    pub no_description: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub repetitions: usize,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetCounts {
    pub boxes: usize,
    pub extracted: usize,
    pub valid: usize,
    pub failed_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounts {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub backend_calls: u64,
}

impl From<StatsSnapshot> for CacheCounts {
    fn from(s: StatsSnapshot) -> Self {
        Self {
            requests: s.requests,
            hits: s.cache_hits,
            misses: s.cache_misses,
            backend_calls: s.backend_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRunRecord {
    pub video_id: String,
    pub mode: Mode,
    pub stages: StageOutcomes,
    pub frames: FrameCounts,
    pub track2_queries: QueryCounts,
    pub snippets: SnippetCounts,
    /// Number of scored predictions, when evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub cache: CacheCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, u64>>,
}

impl VideoRunRecord {
    pub fn has_failure(&self) -> bool {
        self.stages.iter().any(|(_, o)| o.is_failed())
    }
}
