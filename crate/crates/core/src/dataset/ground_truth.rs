use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// Per-video human annotation: a short tag and a one-line caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub video_id: String,
    pub hazard_label: String,
    pub hazard_description: String,
}

/// Reads `video_id,hazard_label,hazard_description` CSV (RFC 4180 quoting).
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthAnnotation>> {
    let malformed = |record, message: String| DatasetError::Malformed {
        path: path.to_path_buf(),
        record,
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| malformed(0, e.to_string()))?
        .clone();
    let expected = ["video_id", "hazard_label", "hazard_description"];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(malformed(
            0,
            format!("expected header {}", expected.join(",")),
        ));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<GroundTruthAnnotation>().enumerate() {
        let record = i + 1;
        let mut row = row.map_err(|e| malformed(record, e.to_string()))?;
        row.video_id = row.video_id.trim().to_string();
        row.hazard_label = row.hazard_label.trim().to_string();
        row.hazard_description = row.hazard_description.trim().to_string();
        if row.video_id.is_empty() {
            return Err(malformed(record, "empty video_id".into()));
        }
        if row.hazard_label.is_empty() {
            return Err(malformed(record, "empty hazard_label".into()));
        }
        if row.hazard_description.is_empty() {
            return Err(malformed(record, "empty hazard_description".into()));
        }
        if !seen.insert(row.video_id.clone()) {
            return Err(DatasetError::DuplicateVideo {
                path: path.to_path_buf(),
                video_id: row.video_id,
                record,
            });
        }
        out.push(row);
    }
    Ok(out)
}
