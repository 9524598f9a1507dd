use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{class_dirs, image_files};
use super::{BBox, CellImage, RawImage, CROP_SIZE};
use crate::color::{rgb_to_hsv, HueBand};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorDetectParams {
    /// Stain hues accepted by the mask.
    pub hue_band: HueBand,
    pub min_saturation: f64,
    /// Smallest connected component accepted as a cell, in pixels.
    pub min_area: usize,
}

impl Default for ColorDetectParams {
    /// Blue through purple to pink; excludes the orange-red of erythrocytes.
    fn default() -> Self {
        Self {
            hue_band: HueBand::new(200.0, 350.0),
            min_saturation: 0.25,
            min_area: 400,
        }
    }
}

impl ColorDetectParams {
    pub fn passes(&self, rgb: [u8; 3]) -> bool {
        let (h, s, _) = rgb_to_hsv(rgb);
        s > self.min_saturation && self.hue_band.contains(h)
    }

    pub fn mask(&self, image: &RgbImage) -> Vec<bool> {
        image.pixels().map(|p| self.passes(p.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub area: usize,
    pub bbox: BBox,
}

/// Labels 8-connected foreground components of a row-major mask with a
/// two-pass union-find. Components are numbered in raster order of their
/// first pixel; label 0 is background.
pub fn label_mask(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, Vec<Component>) {
    assert_eq!(mask.len(), width * height);
    let mut parent: Vec<u32> = vec![0];
    let mut labels = vec![0u32; mask.len()];

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[i - 1] != 0 {
                neighbours[n] = labels[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - width;
                if x > 0 && labels[up - 1] != 0 {
                    neighbours[n] = labels[up - 1];
                    n += 1;
                }
                if labels[up] != 0 {
                    neighbours[n] = labels[up];
                    n += 1;
                }
                if x + 1 < width && labels[up + 1] != 0 {
                    neighbours[n] = labels[up + 1];
                    n += 1;
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[i] = l;
                continue;
            }
            let mut root = find(&mut parent, neighbours[0]);
            for &nb in &neighbours[1..n] {
                let r = find(&mut parent, nb);
                if r != root {
                    let (lo, hi) = (root.min(r), root.max(r));
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            labels[i] = root;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if labels[i] == 0 {
                continue;
            }
            let root = find(&mut parent, labels[i]) as usize;
            if remap[root] == 0 {
                comps.push(Component {
                    area: 0,
                    bbox: BBox {
                        row_min: y as u32,
                        col_min: x as u32,
                        row_max: y as u32 + 1,
                        col_max: x as u32 + 1,
                    },
                });
                remap[root] = comps.len() as u32;
            }
            let l = remap[root];
            labels[i] = l;
            let c = &mut comps[l as usize - 1];
            c.area += 1;
            c.bbox.row_min = c.bbox.row_min.min(y as u32);
            c.bbox.col_min = c.bbox.col_min.min(x as u32);
            c.bbox.row_max = c.bbox.row_max.max(y as u32 + 1);
            c.bbox.col_max = c.bbox.col_max.max(x as u32 + 1);
        }
    }
    (labels, comps)
}

/// Bounding box of the largest connected component of stain-colored
/// pixels. Equal areas resolve to the component seen first in raster order.
pub fn detect_cell_region(image: &RawImage, params: &ColorDetectParams) -> Result<BBox> {
    let (w, h) = image.pixels.dimensions();
    let mask = params.mask(&image.pixels);
    let (_, comps) = label_mask(&mask, w as usize, h as usize);
    let mut best: Option<&Component> = None;
    for c in &comps {
        if best.is_none_or(|b| c.area > b.area) {
            best = Some(c);
        }
    }
    match best {
        None => Err(Error::NoCellFound(format!(
            "{}: no pixel passes the color mask",
            image.source_path.display()
        ))),
        Some(c) if c.area < params.min_area => Err(Error::NoCellFound(format!(
            "{}: largest component has {} pixels (< {})",
            image.source_path.display(),
            c.area,
            params.min_area
        ))),
        Some(c) => Ok(c.bbox),
    }
}

/// Expands `bbox` to a square about its center and bilinearly resamples
/// it to 100×100. Samples outside the image replicate the nearest edge.
pub fn extract_cell(image: &RawImage, bbox: &BBox) -> CellImage {
    let src = &image.pixels;
    let (w, h) = src.dimensions();
    let side = bbox.height().max(bbox.width()) as i64;
    let r0 = bbox.row_min as i64 - (side - bbox.height() as i64).div_euclid(2);
    let c0 = bbox.col_min as i64 - (side - bbox.width() as i64).div_euclid(2);
    let scale = side as f64 / CROP_SIZE as f64;

    let sample = |y: i64, x: i64| -> [f64; 3] {
        let p = src.get_pixel(x.clamp(0, w as i64 - 1) as u32, y.clamp(0, h as i64 - 1) as u32);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };

    let mut out = RgbImage::new(CROP_SIZE, CROP_SIZE);
    for oy in 0..CROP_SIZE {
        let sy = r0 as f64 + (oy as f64 + 0.5) * scale - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        for ox in 0..CROP_SIZE {
            let sx = c0 as f64 + (ox as f64 + 0.5) * scale - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (y0i, x0i) = (y0 as i64, x0 as i64);
            let p00 = sample(y0i, x0i);
            let p01 = sample(y0i, x0i + 1);
            let p10 = sample(y0i + 1, x0i);
            let p11 = sample(y0i + 1, x0i + 1);
            let mut px = [0u8; 3];
            for k in 0..3 {
                let top = p00[k] * (1.0 - fx) + p01[k] * fx;
                let bottom = p10[k] * (1.0 - fx) + p11[k] * fx;
                px[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(ox, oy, Rgb(px));
        }
    }
    CellImage::new(out, &image.class_label, &image.source_path).expect("crop is 100x100")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropFormat {
    #[default]
    Png,
    Jpeg,
}

impl CropFormat {
    fn extension(self) -> &'static str {
        match self {
            CropFormat::Png => "png",
            CropFormat::Jpeg => "jpg",
        }
    }

    fn image_format(self) -> ImageFormat {
        match self {
            CropFormat::Png => ImageFormat::Png,
            CropFormat::Jpeg => ImageFormat::Jpeg,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExtractReport {
    pub extracted: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Runs detection and cropping over `<in_root>/<class>/*` and writes crops
/// to `<out_root>/<class>/<stem>.<ext>`. Images without a detectable cell
/// are skipped and listed in the report.
pub fn extract_dataset(
    in_root: &Path,
    out_root: &Path,
    params: &ColorDetectParams,
    format: CropFormat,
) -> Result<ExtractReport> {
    let mut jobs = Vec::new();
    for (class, dir) in class_dirs(in_root)? {
        let out_dir = out_root.join(&class);
        std::fs::create_dir_all(&out_dir).at(&out_dir)?;
        for file in image_files(&dir)? {
            jobs.push((class.clone(), file, out_dir.clone()));
        }
    }

    let results: Vec<Result<std::result::Result<(), (PathBuf, String)>>> = jobs
        .par_iter()
        .map(|(class, file, out_dir)| {
            let raw = RawImage::load(file, class)?;
            let (w, h) = raw.pixels.dimensions();
            if w < CROP_SIZE || h < CROP_SIZE {
                return Ok(Err((file.clone(), format!("image is {w}x{h}, below {CROP_SIZE}x{CROP_SIZE}"))));
            }
            let bbox = match detect_cell_region(&raw, params) {
                Ok(b) => b,
                Err(Error::NoCellFound(msg)) => return Ok(Err((file.clone(), msg))),
                Err(e) => return Err(e),
            };
            let cell = extract_cell(&raw, &bbox);
            let stem = file.file_stem().unwrap_or_default().to_string_lossy();
            let out = out_dir.join(format!("{stem}.{}", format.extension()));
            cell.pixels().save_with_format(&out, format.image_format())?;
            Ok(Ok(()))
        })
        .collect();

    let mut report = ExtractReport::default();
    for r in results {
        match r? {
            Ok(()) => report.extracted += 1,
            Err(skip) => report.skipped.push(skip),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::hsv_to_rgb;

    fn canvas(h: u32, w: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
    }

    fn disk(img: &mut RgbImage, cy: i64, cx: i64, r: i64, color: [u8; 3]) {
        for y in 0..img.height() as i64 {
            for x in 0..img.width() as i64 {
                if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                    img.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
    }

    fn raw(pixels: RgbImage) -> RawImage {
        RawImage {
            pixels,
            source_path: "mem.png".into(),
            class_label: "x".into(),
        }
    }

    const PURPLE: [u8; 3] = [150, 60, 170];

    #[test]
    fn purple_disk_is_found() {
        let mut img = canvas(200, 200);
        disk(&mut img, 80, 120, 30, PURPLE);
        let b = detect_cell_region(&raw(img), &ColorDetectParams::default()).unwrap();
        assert!(b.contains(80, 120));
        assert!((55..=65).contains(&b.height()) && (55..=65).contains(&b.width()), "{b:?}");
    }

    #[test]
    fn blank_image_has_no_cell() {
        let r = detect_cell_region(&raw(canvas(200, 200)), &ColorDetectParams::default());
        assert!(matches!(r, Err(Error::NoCellFound(_))));
    }

    #[test]
    fn small_component_is_rejected() {
        let mut img = canvas(200, 200);
        disk(&mut img, 50, 50, 8, PURPLE);
        let r = detect_cell_region(&raw(img), &ColorDetectParams::default());
        assert!(matches!(r, Err(Error::NoCellFound(_))));
    }

    #[test]
    fn largest_of_two_disks_wins() {
        let mut img = canvas(200, 200);
        disk(&mut img, 40, 40, 10, PURPLE);
        disk(&mut img, 130, 120, 30, PURPLE);
        let b = detect_cell_region(&raw(img), &ColorDetectParams::default()).unwrap();
        assert_eq!(
            b,
            BBox {
                row_min: 100,
                col_min: 90,
                row_max: 161,
                col_max: 151
            }
        );
    }

    #[test]
    fn pink_and_blue_pass_default_mask() {
        let p = ColorDetectParams::default();
        assert!(p.passes(hsv_to_rgb(330.0, 0.6, 0.85)));
        assert!(p.passes(hsv_to_rgb(225.0, 0.6, 0.8)));
        assert!(!p.passes(hsv_to_rgb(5.0, 0.6, 0.8)));
        assert!(!p.passes([235, 225, 230]));
    }

    #[test]
    fn crop_of_exact_100_box_is_a_copy() {
        let mut img = RgbImage::new(180, 160);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]);
        }
        let bbox = BBox {
            row_min: 30,
            col_min: 45,
            row_max: 130,
            col_max: 145,
        };
        let cell = extract_cell(&raw(img.clone()), &bbox);
        for y in 0..100 {
            for x in 0..100 {
                assert_eq!(cell.pixels().get_pixel(x, y), img.get_pixel(x + 45, y + 30));
            }
        }
    }

    #[test]
    fn left_edge_box_is_padded_by_replication() {
        // 100 tall, 40 wide box against the left edge: the square extends
        // 30 columns left of the image, which replicate column 0.
        let mut img = RgbImage::new(200, 150);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([x.min(255) as u8, (y % 256) as u8, 9]);
        }
        let bbox = BBox {
            row_min: 20,
            col_min: 0,
            row_max: 120,
            col_max: 40,
        };
        let cell = extract_cell(&raw(img.clone()), &bbox);
        assert_eq!(cell.pixels().dimensions(), (100, 100));
        for y in 0..100 {
            for x in 0..=30 {
                assert_eq!(cell.pixels().get_pixel(x, y), img.get_pixel(0, y + 20), "({x},{y})");
            }
            assert_eq!(cell.pixels().get_pixel(31, y), img.get_pixel(1, y + 20));
        }
    }

    #[test]
    fn corners_always_yield_100x100() {
        let img = canvas(150, 170);
        let (w, h) = (170, 150);
        for &(r0, c0, r1, c1) in &[(0, 0, 30, 20), (120, 0, 150, 45), (0, 140, 60, 170), (100, 120, h, w)] {
            let b = BBox {
                row_min: r0,
                col_min: c0,
                row_max: r1,
                col_max: c1,
            };
            let cell = extract_cell(&raw(img.clone()), &b);
            assert_eq!(cell.pixels().dimensions(), (100, 100));
        }
    }
}
