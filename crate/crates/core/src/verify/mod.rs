//! Visual verification: score every valid snippet against every COS label,
//! keep the per-row top-decile cells, and match them to the anomalies.

mod heatmap;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Snippet;
use crate::gateway::{Gateway, ImagePayload, ImageTextSimRequest};
use crate::merge::AnomalousObjectSet;
use crate::parallel::map_bounded;

pub use heatmap::{emit_heatmap, heatmap_csv, heatmap_svg, HeatmapFiles};

pub const DEFAULT_PERCENTILE: f64 = 0.90;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no valid snippets")]
    NoValidSnippets,
    #[error("no labels to compare against")]
    NoLabels,
    #[error("similarity failed for every snippet ({} rows)", .0.len())]
    AllRowsFailed(Vec<RowFailure>),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowId {
    pub video_id: String,
    pub frame_index: usize,
    pub track_id: String,
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.video_id, self.frame_index, self.track_id
        )
    }
}

impl From<&Snippet> for RowId {
    fn from(s: &Snippet) -> Self {
        RowId {
            video_id: s.source.video_id.clone(),
            frame_index: s.source.frame_index,
            track_id: s.source.track_id.clone(),
        }
    }
}

/// Snippet × label scores in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub rows: Vec<RowId>,
    pub cols: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFailure {
    pub row: RowId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixBuild {
    pub matrix: SimilarityMatrix,
    pub failed_rows: Vec<RowFailure>,
    pub warnings: Vec<String>,
}

pub fn similarity_request(
    model: &str,
    snippet: &Snippet,
    labels: &[String],
) -> ImageTextSimRequest {
    ImageTextSimRequest {
        image: ImagePayload::new(snippet.pixels.clone()),
        labels: labels.to_vec(),
        model_tag: model.to_string(),
    }
}

/// One similarity call per snippet. Rows whose call fails are left out
/// (never zero-filled) and reported in `failed_rows`.
pub fn build_similarity_matrix(
    gateway: &Gateway,
    model: &str,
    snippets: &[Snippet],
    labels: &[String],
    workers: usize,
) -> Result<MatrixBuild, VerifyError> {
    if snippets.is_empty() {
        return Err(VerifyError::NoValidSnippets);
    }
    if labels.is_empty() {
        return Err(VerifyError::NoLabels);
    }
    let results = map_bounded(snippets, workers, |_, s| {
        (
            RowId::from(s),
            gateway.image_text_similarity(&similarity_request(model, s, labels)),
        )
    });
    let mut build = MatrixBuild {
        matrix: SimilarityMatrix {
            rows: Vec::new(),
            cols: labels.to_vec(),
            scores: Vec::new(),
        },
        failed_rows: Vec::new(),
        warnings: Vec::new(),
    };
    for (row, r) in results {
        match r {
            Ok(scored) => {
                for (label, _) in labels.iter().zip(&scored.clamped).filter(|(_, c)| **c) {
                    build
                        .warnings
                        .push(format!("{row}: score for {label:?} clamped into [0, 1]"));
                }
                build.matrix.rows.push(row);
                build.matrix.scores.push(scored.scores);
            }
            Err(e) => {
                tracing::warn!(row = %row, error = %e, "similarity row failed");
                build.failed_rows.push(RowFailure {
                    row,
                    error: e.to_string(),
                });
            }
        }
    }
    if build.matrix.rows.is_empty() {
        return Err(VerifyError::AllRowsFailed(build.failed_rows));
    }
    Ok(build)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub row_id: RowId,
    pub col_label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub threshold_per_row: Vec<f64>,
}

/// 1-based nearest rank for `percentile` over `k` ascending values,
/// `ceil(percentile · k)` clamped to `1..=k`. The small epsilon keeps
/// products such as 0.9 · 30 from rounding up past an exact integer.
pub fn nearest_rank(percentile: f64, k: usize) -> usize {
    let r = (percentile * k as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(k.max(1))
}

pub fn detect_top_decile(matrix: &SimilarityMatrix) -> DetectionSet {
    detect_with(matrix, DEFAULT_PERCENTILE, 0.0)
}

/// Per row, the threshold is the nearest-rank `percentile` value of that
/// row; every cell at or above it (and at or above `floor`) is detected.
pub fn detect_with(matrix: &SimilarityMatrix, percentile: f64, floor: f64) -> DetectionSet {
    let mut out = DetectionSet {
        detections: Vec::new(),
        threshold_per_row: Vec::with_capacity(matrix.rows.len()),
    };
    for (row, scores) in matrix.rows.iter().zip(&matrix.scores) {
        if scores.is_empty() {
            out.threshold_per_row.push(f64::INFINITY);
            continue;
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = sorted[nearest_rank(percentile, sorted.len()) - 1];
        out.threshold_per_row.push(threshold);
        for (label, &score) in matrix.cols.iter().zip(scores) {
            if score >= threshold && score >= floor {
                out.detections.push(Detection {
                    row_id: row.clone(),
                    col_label: label.clone(),
                    score,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationHit {
    pub frame_index: usize,
    pub track_id: String,
    pub aos_label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardLocalization {
    pub video_id: String,
    pub hits: Vec<LocalizationHit>,
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Every token of `needle` appears in `haystack`, allowing a plural `s`.
fn token_match(needle: &str, haystack: &str) -> bool {
    let hay = tokens(haystack);
    let need = tokens(needle);
    !need.is_empty()
        && need.iter().all(|n| {
            hay.iter()
                .any(|h| h == n || h.strip_suffix('s') == Some(n) || n.strip_suffix('s') == Some(h))
        })
}

/// Detections whose label names an AOS entry (by head noun or label),
/// grouped by frame. Duplicate (frame, track, anomaly) hits keep the
/// highest score; output order does not depend on detection order.
pub fn localize_hazards(detections: &DetectionSet, aos: &AnomalousObjectSet) -> HazardLocalization {
    let mut hits: BTreeMap<(usize, String, String), f64> = BTreeMap::new();
    for d in &detections.detections {
        for a in &aos.entries {
            if token_match(&a.head_noun, &d.col_label) || token_match(&a.label, &d.col_label) {
                let key = (
                    d.row_id.frame_index,
                    d.row_id.track_id.clone(),
                    a.label.clone(),
                );
                let slot = hits.entry(key).or_insert(d.score);
                *slot = slot.max(d.score);
            }
        }
    }
    HazardLocalization {
        video_id: aos.video_id.clone(),
        hits: hits
            .into_iter()
            .map(
                |((frame_index, track_id, aos_label), score)| LocalizationHit {
                    frame_index,
                    track_id,
                    aos_label,
                    score,
                },
            )
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BoundingBox;
    use crate::gateway::{FixtureError, FixtureResponse, GatewayOptions, MockBackend, RetryPolicy};
    use crate::merge::AnomalyEntry;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn row(frame: usize, track: &str) -> RowId {
        RowId {
            video_id: "v".into(),
            frame_index: frame,
            track_id: track.into(),
        }
    }

    fn matrix(rows: Vec<Vec<f64>>) -> SimilarityMatrix {
        let k = rows.first().map_or(0, Vec::len);
        SimilarityMatrix {
            rows: (0..rows.len()).map(|i| row(i, "t")).collect(),
            cols: (0..k).map(|j| format!("label {j}")).collect(),
            scores: rows,
        }
    }

    fn snippet(frame: usize, shade: u8) -> Snippet {
        Snippet {
            source: BoundingBox {
                video_id: "v".into(),
                frame_index: frame,
                track_id: "1".into(),
                x1: 0,
                y1: 0,
                x2: 2,
                y2: 2,
            },
            width: 2,
            height: 2,
            area: 4,
            pixels: image::RgbImage::from_pixel(2, 2, image::Rgb([shade; 3])),
        }
    }

    fn aos(entries: &[(&str, &str)]) -> AnomalousObjectSet {
        AnomalousObjectSet {
            video_id: "v".into(),
            entries: entries
                .iter()
                .map(|(l, n)| AnomalyEntry {
                    label: l.to_string(),
                    description: l.to_string(),
                    head_noun: n.to_string(),
                })
                .collect(),
            warnings: vec![],
        }
    }

    /// Independent of `nearest_rank`: integer ceil(9k/10).
    fn brute_force(m: &SimilarityMatrix) -> Vec<(usize, usize)> {
        let mut out = vec![];
        for (i, r) in m.scores.iter().enumerate() {
            let mut s = r.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = (9 * s.len()).div_ceil(10);
            let t = s[rank - 1];
            for (j, &v) in r.iter().enumerate() {
                if v >= t {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn cells(m: &SimilarityMatrix, d: &DetectionSet) -> Vec<(usize, usize)> {
        d.detections
            .iter()
            .map(|x| {
                (
                    m.rows.iter().position(|r| *r == x.row_id).unwrap(),
                    m.cols.iter().position(|c| *c == x.col_label).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn ten_column_row() {
        let m = matrix(vec![vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]]);
        let d = detect_top_decile(&m);
        assert_eq!(d.threshold_per_row, vec![0.9]);
        assert_eq!(
            d.detections.iter().map(|x| x.score).collect::<Vec<_>>(),
            vec![0.9, 1.0]
        );
    }

    #[test]
    fn ties_and_single_column() {
        assert_eq!(
            detect_top_decile(&matrix(vec![vec![0.5, 0.5, 0.5]]))
                .detections
                .len(),
            3
        );
        let d = detect_top_decile(&matrix(vec![vec![0.42]]));
        assert_eq!(d.detections.len(), 1);
        assert_eq!(d.threshold_per_row, vec![0.42]);
    }

    #[test]
    fn floor_extension() {
        let d = detect_with(&matrix(vec![vec![0.1, 0.2]]), 0.9, 0.5);
        assert!(d.detections.is_empty());
    }

    #[test]
    fn nearest_rank_is_exact_on_integers() {
        for k in 1..=200 {
            assert_eq!(nearest_rank(0.9, k), (9 * k).div_ceil(10), "k={k}");
        }
    }

    fn gw(mock: MockBackend) -> Gateway {
        let options = GatewayOptions {
            retry: RetryPolicy {
                max_attempts: 1,
                ..RetryPolicy::default()
            },
            ..GatewayOptions::default()
        };
        Gateway::new(Arc::new(mock), None, options)
    }

    #[test]
    fn matrix_shape_and_echo() {
        let labels = vec!["cat".to_string(), "car".to_string()];
        let snippets: Vec<_> = (0..3).map(|i| snippet(i, i as u8 * 10)).collect();
        let mut mock = MockBackend::new(0);
        for (i, s) in snippets.iter().enumerate() {
            let scores = if i == 0 {
                vec![0.91, 0.12]
            } else {
                vec![0.3, 0.4]
            };
            mock.insert(
                &similarity_request("clip", s, &labels),
                FixtureResponse::Scores(scores),
            );
        }
        let b = build_similarity_matrix(&gw(mock), "clip", &snippets, &labels, 2).unwrap();
        assert_eq!(b.matrix.rows.len(), 3);
        assert!(b.matrix.scores.iter().all(|r| r.len() == 2));
        assert_eq!(b.matrix.scores[0], vec![0.91, 0.12]);
    }

    #[test]
    fn failed_rows_are_omitted() {
        let labels = vec!["cat".to_string()];
        let snippets = vec![snippet(0, 1), snippet(1, 2)];
        let mut mock = MockBackend::new(0);
        mock.insert(
            &similarity_request("clip", &snippets[0], &labels),
            FixtureResponse::Scores(vec![1.4]),
        );
        mock.insert(
            &similarity_request("clip", &snippets[1], &labels),
            FixtureResponse::Error(FixtureError {
                status: Some(500),
                message: "x".into(),
            }),
        );
        let b = build_similarity_matrix(&gw(mock.clone()), "clip", &snippets, &labels, 1).unwrap();
        assert_eq!(b.matrix.scores, vec![vec![1.0]]);
        assert_eq!(b.failed_rows.len(), 1);
        assert_eq!(b.warnings.len(), 1);
        assert!(matches!(
            build_similarity_matrix(&gw(mock), "clip", &snippets[1..], &labels, 1),
            Err(VerifyError::AllRowsFailed(_))
        ));
    }

    #[test]
    fn no_snippets() {
        assert!(matches!(
            build_similarity_matrix(&gw(MockBackend::new(0)), "clip", &[], &["x".into()], 1),
            Err(VerifyError::NoValidSnippets)
        ));
    }

    #[test]
    fn localization() {
        let d = DetectionSet {
            detections: vec![
                Detection {
                    row_id: row(12, "3"),
                    col_label: "dog crossing road".into(),
                    score: 0.8,
                },
                Detection {
                    row_id: row(24, "3"),
                    col_label: "Dogs crossing road".into(),
                    score: 0.7,
                },
                Detection {
                    row_id: row(24, "4"),
                    col_label: "parked car".into(),
                    score: 0.9,
                },
            ],
            threshold_per_row: vec![0.8, 0.7, 0.9],
        };
        let loc = localize_hazards(&d, &aos(&[("dog", "dog")]));
        assert_eq!(
            loc.hits.iter().map(|h| h.frame_index).collect::<Vec<_>>(),
            vec![12, 24]
        );
        assert!(loc
            .hits
            .iter()
            .all(|h| h.aos_label == "dog" && h.track_id == "3"));
        assert!(localize_hazards(&d, &aos(&[("moose", "moose")]))
            .hits
            .is_empty());
    }

    proptest! {
        #[test]
        fn detection_matches_sort_brute_force(rows in proptest::collection::vec(
            proptest::collection::vec(0u32..=100, 1..=12), 1..8)) {
            let k = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| {
                let mut r: Vec<f64> = r.into_iter().map(|v| v as f64 / 100.0).collect();
                r.resize(k, 0.5);
                r
            }).collect();
            let m = matrix(rows);
            let d = detect_top_decile(&m);
            prop_assert_eq!(cells(&m, &d), brute_force(&m));
            for i in 0..m.rows.len() {
                prop_assert!(d.detections.iter().any(|x| x.row_id == m.rows[i]));
            }
        }

        #[test]
        fn localization_ignores_detection_order(seed in 0u64..1000) {
            let labels = ["dog on road", "deer near car", "stop sign", "dog and deer"];
            let mut dets: Vec<Detection> = (0..8).map(|i| Detection {
                row_id: row(i % 3, &format!("{}", i % 2)),
                col_label: labels[(i + seed as usize) % 4].to_string(),
                score: ((i * 7 + seed as usize) % 10) as f64 / 10.0,
            }).collect();
            let a = aos(&[("dog", "dog"), ("deer", "deer")]);
            let set = |d: &Vec<Detection>| DetectionSet { detections: d.clone(), threshold_per_row: vec![] };
            let first = localize_hazards(&set(&dets), &a);
            dets.reverse();
            dets.rotate_left((seed % 8) as usize);
            prop_assert_eq!(localize_hazards(&set(&dets), &a), first);
        }
    }
}
