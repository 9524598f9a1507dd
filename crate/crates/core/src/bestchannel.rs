//! Per-position argmax channel of a feature map, and the mosaic that shows
//! each position's winning channel visualization at a size proportional to
//! its activation.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featviz::VizLookup;
use crate::model::FeatureMap;
use crate::render::draw_number;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestChannelMap {
    #[serde(rename = "layer")]
    pub layer_name: String,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    /// Row-major `(channel, activation)` per position.
    pub cells: Vec<(usize, f64)>,
}

impl BestChannelMap {
    pub fn cell(&self, row: usize, col: usize) -> (usize, f64) {
        self.cells[row * self.width + col]
    }

    fn activation_range(&self) -> (f64, f64) {
        self.cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a)| {
            (lo.min(a), hi.max(a))
        })
    }
}

/// Argmax over channels at every position; ties go to the lowest channel.
pub fn best_channel_map(featmap: &FeatureMap) -> BestChannelMap {
    let cells = featmap
        .values
        .chunks_exact(featmap.channels)
        .map(|cell| {
            let mut best = 0;
            for (c, &v) in cell.iter().enumerate().skip(1) {
                if v > cell[best] {
                    best = c;
                }
            }
            (best, cell[best])
        })
        .collect();
    BestChannelMap {
        layer_name: featmap.layer_name.clone(),
        height: featmap.height,
        width: featmap.width,
        cells,
    }
}

#[derive(Debug, Clone)]
pub struct MosaicStyle {
    /// Slot side in pixels; one slot per map position.
    pub slot: u32,
    /// Tile side for the weakest activation, as a fraction of the slot.
    pub min_fraction: f64,
    pub label_scale: u32,
    /// Source image drawn under the mosaic, with its opacity.
    pub background: Option<(RgbImage, f64)>,
}

impl Default for MosaicStyle {
    fn default() -> Self {
        Self {
            slot: 40,
            min_fraction: 0.15,
            label_scale: 1,
            background: None,
        }
    }
}

/// Tile side for each cell: linear in activation between the map's minimum
/// (`min_fraction` of the slot) and maximum (full slot).
pub fn tile_sides(map: &BestChannelMap, style: &MosaicStyle) -> Vec<u32> {
    let (lo, hi) = map.activation_range();
    let slot = style.slot as f64;
    map.cells
        .iter()
        .map(|&(_, a)| {
            let frac = if hi > lo {
                style.min_fraction + (1.0 - style.min_fraction) * (a - lo) / (hi - lo)
            } else if hi > 0.0 {
                1.0
            } else {
                style.min_fraction
            };
            ((frac * slot).round() as u32).clamp(1, style.slot)
        })
        .collect()
}

pub fn render_best_channel_image(
    map: &BestChannelMap,
    viz: &impl VizLookup,
    style: &MosaicStyle,
) -> Result<RgbImage> {
    let (w, h) = (map.width as u32 * style.slot, map.height as u32 * style.slot);
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    if let Some((bg, opacity)) = &style.background {
        let bg = imageops::resize(bg, w, h, FilterType::Triangle);
        let a = opacity.clamp(0.0, 1.0);
        for (p, q) in canvas.pixels_mut().zip(bg.pixels()) {
            for k in 0..3 {
                p[k] = (p[k] as f64 * (1.0 - a) + q[k] as f64 * a).round() as u8;
            }
        }
    }
    let sides = tile_sides(map, style);
    for (i, (&(channel, _), &side)) in map.cells.iter().zip(&sides).enumerate() {
        let fimg = viz.lookup(&map.layer_name, channel).ok_or_else(|| Error::MissingVisualization {
            layer: map.layer_name.clone(),
            channel,
        })?;
        let (r, c) = ((i / map.width) as u32, (i % map.width) as u32);
        let tile = imageops::resize(&fimg.to_rgb8(), side, side, FilterType::Triangle);
        let off = (style.slot - side) / 2;
        imageops::replace(
            &mut canvas,
            &tile,
            (c * style.slot + off) as i64,
            (r * style.slot + off) as i64,
        );
        draw_number(
            &mut canvas,
            (c * style.slot) as i64,
            ((r + 1) * style.slot) as i64,
            channel,
            style.label_scale,
        );
    }
    Ok(canvas)
}
