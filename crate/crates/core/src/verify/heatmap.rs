//! CSV and SVG renderings of a similarity matrix. Detected cells are
//! filled green and carry `class="detected"`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{DetectionSet, SimilarityMatrix, VerifyError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Header `snippet,<labels…>`, then one `video:frame:track,<scores>` row per
/// snippet with scores at 4 decimals.
pub fn heatmap_csv(matrix: &SimilarityMatrix) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["snippet".to_string()];
    header.extend(matrix.cols.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (row, scores) in matrix.rows.iter().zip(&matrix.scores) {
        let mut rec = vec![row.to_string()];
        rec.extend(scores.iter().map(|s| format!("{s:.4}")));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// White → blue ramp for undetected cells.
fn ramp(score: f64) -> String {
    let t = score.clamp(0.0, 1.0);
    let r = (255.0 - 205.0 * t).round() as u8;
    let g = (255.0 - 155.0 * t).round() as u8;
    let b = (255.0 - 55.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

const CELL_W: usize = 84;
const CELL_H: usize = 26;
const DETECTED_FILL: &str = "#2ca02c";

pub fn heatmap_svg(matrix: &SimilarityMatrix, detections: &DetectionSet) -> String {
    let detected: HashSet<(String, &str)> = detections
        .detections
        .iter()
        .map(|d| (d.row_id.to_string(), d.col_label.as_str()))
        .collect();
    let row_labels: Vec<String> = matrix.rows.iter().map(ToString::to_string).collect();
    let left = 16
        + 7 * row_labels
            .iter()
            .map(|l| l.chars().count())
            .max()
            .unwrap_or(0);
    let top = 24
        + 6 * matrix
            .cols
            .iter()
            .map(|c| c.chars().count())
            .max()
            .unwrap_or(0)
            .min(40);
    let width = left + CELL_W * matrix.cols.len() + 16;
    let height = top + CELL_H * matrix.rows.len() + 16;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    for (j, col) in matrix.cols.iter().enumerate() {
        let x = left + CELL_W * j + CELL_W / 2;
        let y = top - 6;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-35 {x} {y})">{}</text>"#,
            escape(col)
        );
    }
    for (i, (label, scores)) in row_labels.iter().zip(&matrix.scores).enumerate() {
        let y = top + CELL_H * i;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6,
            y + CELL_H / 2 + 4,
            escape(label)
        );
        for (j, (col, &score)) in matrix.cols.iter().zip(scores).enumerate() {
            let x = left + CELL_W * j;
            let hit = detected.contains(&(label.clone(), col.as_str()));
            let (class, fill) = if hit {
                ("detected", DETECTED_FILL.to_string())
            } else {
                ("cell", ramp(score))
            };
            let _ = writeln!(
                s,
                r##"<rect class="{class}" x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#888888" stroke-width="0.5"><title>{} / {}: {score:.4}</title></rect>"##,
                escape(label),
                escape(col)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{score:.4}</text>"#,
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `heatmap.csv` and `heatmap.svg` into `out_dir`.
pub fn emit_heatmap(
    matrix: &SimilarityMatrix,
    detections: &DetectionSet,
    out_dir: &Path,
) -> Result<HeatmapFiles, VerifyError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| VerifyError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let files = HeatmapFiles {
        csv: out_dir.join("heatmap.csv"),
        svg: out_dir.join("heatmap.svg"),
    };
    std::fs::write(&files.csv, heatmap_csv(matrix)).map_err(io(&files.csv))?;
    std::fs::write(&files.svg, heatmap_svg(matrix, detections)).map_err(io(&files.svg))?;
    Ok(files)
}
