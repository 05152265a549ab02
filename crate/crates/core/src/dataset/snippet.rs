use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, DatasetError, Result};

/// Cropped image region for one bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub source: BoundingBox,
    pub width: u32,
    pub height: u32,
    pub area: u64,
    pub pixels: RgbImage,
}

/// Minimum snippet resolution. A snippet is kept only when
/// `width >= min_width`, `height >= min_height` and `area > min_area_exclusive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnippetThresholds {
    pub min_width: u32,
    pub min_height: u32,
    pub min_area_exclusive: u64,
}

impl Default for SnippetThresholds {
    fn default() -> Self {
        Self {
            min_width: 175,
            min_height: 175,
            min_area_exclusive: 35_000,
        }
    }
}

impl SnippetThresholds {
    pub fn accepts(&self, width: u32, height: u32, area: u64) -> bool {
        width >= self.min_width && height >= self.min_height && area > self.min_area_exclusive
    }
}

pub fn extract_snippet(frame_image: &RgbImage, bbox: &BoundingBox) -> Result<Snippet> {
    let (width, height) = frame_image.dimensions();
    if bbox.x2 > width || bbox.y2 > height || bbox.x2 <= bbox.x1 || bbox.y2 <= bbox.y1 {
        return Err(DatasetError::BoxOutOfImage {
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
            width,
            height,
        });
    }
    let pixels =
        image::imageops::crop_imm(frame_image, bbox.x1, bbox.y1, bbox.width(), bbox.height())
            .to_image();
    Ok(Snippet {
        source: bbox.clone(),
        width: bbox.width(),
        height: bbox.height(),
        area: bbox.area(),
        pixels,
    })
}

/// Drops low-resolution snippets using the default thresholds; order is kept.
pub fn filter_snippets(snippets: Vec<Snippet>) -> Vec<Snippet> {
    filter_snippets_with(snippets, &SnippetThresholds::default())
}

pub fn filter_snippets_with(
    snippets: Vec<Snippet>,
    thresholds: &SnippetThresholds,
) -> Vec<Snippet> {
    snippets
        .into_iter()
        .filter(|s| thresholds.accepts(s.width, s.height, s.area))
        .collect()
}
