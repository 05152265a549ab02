use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbImage;

use super::{DatasetError, Result, VideoScene};

pub type FrameImage = RgbImage;

/// Index of the pre-extracted frames of one scene: files named
/// `<zero-padded index>.<ext>` inside `frame_source`. Padding width is not
/// fixed; stems are parsed as integers.
#[derive(Debug, Clone)]
pub struct FrameStore {
    video_id: String,
    dir: PathBuf,
    files: BTreeMap<usize, PathBuf>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

impl FrameStore {
    pub fn open(scene: &VideoScene) -> Result<Self> {
        let dir = scene.frame_source.clone();
        if dir.is_file() {
            return Err(DatasetError::UnsupportedSource(dir));
        }
        let entries = std::fs::read_dir(&dir).map_err(|source| DatasetError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut files = BTreeMap::new();
        for entry in entries {
            let path = entry
                .map_err(|source| DatasetError::Io {
                    path: dir.clone(),
                    source,
                })?
                .path();
            let ext_ok = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            let index = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<usize>().ok());
            if let (true, Some(index)) = (ext_ok, index) {
                if index < scene.frame_count {
                    files.insert(index, path);
                }
            }
        }
        Ok(Self {
            video_id: scene.video_id.clone(),
            dir,
            files,
        })
    }

    pub fn contains(&self, frame_index: usize) -> bool {
        self.files.contains_key(&frame_index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.files.keys().copied()
    }

    pub fn load(&self, frame_index: usize) -> Result<FrameImage> {
        let path = self
            .files
            .get(&frame_index)
            .ok_or_else(|| DatasetError::MissingFrame {
                video_id: self.video_id.clone(),
                frame_index,
                dir: self.dir.clone(),
            })?;
        let img = image::open(path).map_err(|e| DatasetError::Decode {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(img.to_rgb8())
    }
}
