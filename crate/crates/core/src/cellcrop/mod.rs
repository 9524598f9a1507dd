//! Cell detection, fixed-size cropping, dataset manifests and the
//! synthetic blob generator.

mod detect;
mod manifest;
mod synth;

use std::path::{Path, PathBuf};

use image::RgbImage;

pub use detect::{
    detect_cell_region, extract_cell, extract_dataset, label_mask, ColorDetectParams, CropFormat,
    ExtractReport,
};
pub use manifest::{build_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_dataset, write_synth_images, SynthClass, SynthSpec};

use crate::error::{Error, Result};

/// Side length of every extracted crop.
pub const CROP_SIZE: u32 = 100;

/// A labeled source image of arbitrary size.
#[derive(Debug, Clone)]
pub struct RawImage {
    pub pixels: RgbImage,
    pub source_path: PathBuf,
    pub class_label: String,
}

impl RawImage {
    pub fn load(path: &Path, class_label: &str) -> Result<Self> {
        let pixels = image::open(path)?.to_rgb8();
        Ok(Self {
            pixels,
            source_path: path.to_path_buf(),
            class_label: class_label.to_string(),
        })
    }
}

/// A 100×100 RGB crop around one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellImage {
    pixels: RgbImage,
    pub class_label: String,
    pub source_path: PathBuf,
}

impl CellImage {
    pub fn new(pixels: RgbImage, class_label: &str, source_path: &Path) -> Result<Self> {
        if pixels.dimensions() != (CROP_SIZE, CROP_SIZE) {
            return Err(Error::BadImage {
                path: source_path.to_path_buf(),
                reason: format!(
                    "expected {CROP_SIZE}x{CROP_SIZE}, got {}x{}",
                    pixels.width(),
                    pixels.height()
                ),
            });
        }
        Ok(Self {
            pixels,
            class_label: class_label.to_string(),
            source_path: source_path.to_path_buf(),
        })
    }

    pub fn load(path: &Path, class_label: &str) -> Result<Self> {
        let pixels = image::open(path)?.to_rgb8();
        Self::new(pixels, class_label, path)
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }
}

/// Half-open pixel box `[row_min, row_max) × [col_min, col_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub row_min: u32,
    pub col_min: u32,
    pub row_max: u32,
    pub col_max: u32,
}

impl BBox {
    pub fn height(&self) -> u32 {
        self.row_max - self.row_min
    }

    pub fn width(&self) -> u32 {
        self.col_max - self.col_min
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        row >= self.row_min && row < self.row_max && col >= self.col_min && col < self.col_max
    }
}
