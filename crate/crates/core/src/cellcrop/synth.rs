//! Synthetic stand-in for stained blood smears: one saturated colored
//! blob per image on a pale background, with a few faint erythrocyte-like
//! discs as clutter.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{build_manifest, DatasetManifest};
use crate::color::hsv_to_rgb;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    /// Dominant hue in degrees.
    pub hue: f64,
    #[serde(default = "default_hue_jitter")]
    pub hue_jitter: f64,
    #[serde(default = "default_saturation")]
    pub saturation: (f64, f64),
    #[serde(default = "default_value")]
    pub value: (f64, f64),
    /// Blob semi-axis range in pixels.
    #[serde(default = "default_radius")]
    pub radius: (f64, f64),
    /// Per-pixel texture noise, as a fraction of full scale.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_hue_jitter() -> f64 {
    8.0
}
fn default_saturation() -> (f64, f64) {
    (0.45, 0.7)
}
fn default_value() -> (f64, f64) {
    (0.72, 0.9)
}
fn default_radius() -> (f64, f64) {
    (25.0, 38.0)
}
fn default_noise() -> f64 {
    0.03
}

impl SynthClass {
    pub fn new(name: &str, hue: f64) -> Self {
        Self {
            name: name.to_string(),
            hue,
            hue_jitter: default_hue_jitter(),
            saturation: default_saturation(),
            value: default_value(),
            radius: default_radius(),
            noise: default_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<SynthClass>,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    /// Faint clutter discs per image.
    #[serde(default = "default_distractors")]
    pub distractors: usize,
}

fn default_image_size() -> u32 {
    160
}
fn default_distractors() -> usize {
    3
}

impl Default for SynthSpec {
    /// Pink blobs versus blue blobs.
    fn default() -> Self {
        Self {
            classes: vec![SynthClass::new("pinkblob", 330.0), SynthClass::new("blueblob", 225.0)],
            image_size: default_image_size(),
            distractors: default_distractors(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 classes".into()));
        }
        if self.image_size < 150 {
            return Err(Error::Config(format!(
                "synthetic images must be at least 150 pixels, got {}",
                self.image_size
            )));
        }
        for c in &self.classes {
            let max_r = c.radius.1;
            if c.radius.0 <= 0.0 || c.radius.0 > max_r || 2.0 * max_r + 4.0 > self.image_size as f64 {
                return Err(Error::Config(format!("class `{}` has an invalid radius range", c.name)));
            }
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn render(spec: &SynthSpec, class: &SynthClass, rng: &mut ChaCha8Rng) -> RgbImage {
    let size = spec.image_size;
    let noise = Normal::new(0.0, 4.0).expect("finite");
    let bg = hsv_to_rgb(340.0, 0.05, 0.92);
    let mut img = RgbImage::from_fn(size, size, |_, _| {
        let mut p = [0u8; 3];
        for k in 0..3 {
            p[k] = (bg[k] as f64 + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(p)
    });

    for _ in 0..spec.distractors {
        let r = rng.random_range(10.0..16.0);
        let cy = rng.random_range(0.0..size as f64);
        let cx = rng.random_range(0.0..size as f64);
        let color = hsv_to_rgb(rng.random_range(0.0..15.0), 0.18, 0.88);
        fill_ellipse(&mut img, cy, cx, r, r, 0.0, |_, _, _| color);
    }

    let ry = range(rng, class.radius);
    let rx = range(rng, class.radius);
    let margin = ry.max(rx) + 2.0;
    let cy = rng.random_range(margin..size as f64 - margin);
    let cx = rng.random_range(margin..size as f64 - margin);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let hue = class.hue + range(rng, (-class.hue_jitter, class.hue_jitter));
    let sat = range(rng, class.saturation);
    let val = range(rng, class.value);
    let sigma = (class.noise * 255.0).max(1e-9);
    let tex = Normal::new(0.0, sigma).expect("finite");
    let body = hsv_to_rgb(hue, sat, val);
    let nucleus = hsv_to_rgb(hue, (sat + 0.15).min(1.0), val * 0.7);
    let mut pixel_rng = ChaCha8Rng::seed_from_u64(rng.random());
    fill_ellipse(&mut img, cy, cx, ry, rx, angle, |_, _, inner| {
        let base = if inner < 0.45 { nucleus } else { body };
        let mut p = [0u8; 3];
        for k in 0..3 {
            p[k] = (base[k] as f64 + tex.sample(&mut pixel_rng)).round().clamp(0.0, 255.0) as u8;
        }
        p
    });
    img
}

/// Fills a rotated ellipse. `color` receives `(y, x, normalized radius²)`.
fn fill_ellipse(
    img: &mut RgbImage,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    mut color: impl FnMut(u32, u32, f64) -> [u8; 3],
) {
    let (s, c) = angle.sin_cos();
    let reach = ry.max(rx).ceil() as i64 + 1;
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in (cy as i64 - reach).max(0)..(cy as i64 + reach + 1).min(h) {
        for x in (cx as i64 - reach).max(0)..(cx as i64 + reach + 1).min(w) {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let d = (u / rx).powi(2) + (v / ry).powi(2);
            if d <= 1.0 {
                let p = color(y as u32, x as u32, d);
                img.put_pixel(x as u32, y as u32, Rgb(p));
            }
        }
    }
}

/// Writes `n` images per class to `<out_dir>/<class>/<class>_<i>.png`.
pub fn write_synth_images(spec: &SynthSpec, n: usize, out_dir: &Path, seed: u64) -> Result<()> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        let dir = out_dir.join(&class.name);
        std::fs::create_dir_all(&dir).at(&dir)?;
        for i in 0..n {
            jobs.push((ci, i, dir.join(format!("{}_{i:04}.png", class.name))));
        }
    }
    jobs.par_iter().try_for_each(|(ci, i, path)| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, *ci as u64, *i as u64));
        let img = render(spec, &spec.classes[*ci], &mut rng);
        img.save(path).map_err(Error::from)
    })
}

/// Writes the synthetic images and returns their manifest (80/20 split).
pub fn synth_dataset(spec: &SynthSpec, n: usize, out_dir: &Path, seed: u64) -> Result<DatasetManifest> {
    write_synth_images(spec, n, out_dir, seed)?;
    build_manifest(out_dir, 0.8, seed)
}
