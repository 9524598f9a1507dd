use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rayon::prelude::*;

use super::{visualize_feature, FeatureImage, VizParams, VizTarget};
use crate::error::{Error, Result};
use crate::model::TrainedModel;
use crate::render::{draw_cross, draw_number};

#[derive(Debug, Clone, PartialEq)]
pub struct GridStyle {
    pub columns: usize,
    /// Tile side in pixels.
    pub tile: u32,
    pub gap: u32,
    pub label_scale: u32,
}

impl Default for GridStyle {
    fn default() -> Self {
        Self {
            columns: 6,
            tile: 100,
            gap: 4,
            label_scale: 2,
        }
    }
}

pub const DEAD_FILL: Rgb<u8> = Rgb([128, 128, 128]);
pub const DEAD_MARK: Rgb<u8> = Rgb([70, 70, 70]);

pub struct LayerGrid {
    pub image: RgbImage,
    pub rows: usize,
    pub columns: usize,
    pub tiles: Vec<FeatureImage>,
}

/// One labeled tile. Dead channels become a neutral grey square with a cross.
pub fn render_tile(img: &FeatureImage, style: &GridStyle) -> RgbImage {
    let t = style.tile;
    let mut tile = if img.dead {
        let mut tile = RgbImage::from_pixel(t, t, DEAD_FILL);
        let inset = (t / 5) as i64;
        draw_cross(&mut tile, inset, inset, t as i64 - 2 * inset, t as i64 - 2 * inset, DEAD_MARK);
        tile
    } else {
        let rgb = img.to_rgb8();
        if rgb.dimensions() == (t, t) {
            rgb
        } else {
            imageops::resize(&rgb, t, t, FilterType::Triangle)
        }
    };
    draw_number(&mut tile, 0, t as i64, img.channel, style.label_scale);
    tile
}

/// Visualizes each channel and tiles the results row-major.
pub fn visualize_layer_grid(
    model: &TrainedModel,
    layer: &str,
    channels: &[usize],
    params: &VizParams,
    style: &GridStyle,
) -> Result<LayerGrid> {
    if channels.is_empty() {
        return Err(Error::Config("no channels to visualize".into()));
    }
    let (_, _, c) = model.layer_shape(layer)?;
    if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
        return Err(Error::OutOfRange {
            what: "channel",
            value: bad,
            limit: c,
        });
    }
    let tiles: Vec<FeatureImage> = channels
        .par_iter()
        .map(|&ch| visualize_feature(model, &VizTarget::channel(layer, ch), params))
        .collect::<Result<_>>()?;
    let image = compose_grid(&tiles, style);
    let columns = style.columns.max(1).min(tiles.len());
    Ok(LayerGrid {
        image,
        rows: tiles.len().div_ceil(columns),
        columns,
        tiles,
    })
}

pub(crate) fn compose_grid(tiles: &[FeatureImage], style: &GridStyle) -> RgbImage {
    let columns = style.columns.max(1).min(tiles.len()) as u32;
    let rows = tiles.len().div_ceil(columns as usize) as u32;
    let (t, g) = (style.tile, style.gap);
    let w = columns * t + (columns - 1) * g;
    let h = rows * t + (rows - 1) * g;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (i, img) in tiles.iter().enumerate() {
        let (r, c) = (i as u32 / columns, i as u32 % columns);
        let tile = render_tile(img, style);
        imageops::replace(&mut canvas, &tile, (c * (t + g)) as i64, (r * (t + g)) as i64);
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featviz::tests::tiny_model;

    fn fast() -> VizParams {
        VizParams {
            steps: 5,
            ..VizParams::default()
        }
    }

    #[test]
    fn twenty_four_channels_make_four_rows_of_six() {
        let fake: Vec<FeatureImage> = (0..24)
            .map(|ch| FeatureImage {
                height: 8,
                width: 8,
                pixels: vec![0.5; 192],
                layer: "a".into(),
                channel: ch,
                position: None,
                objective_initial: 0.0,
                objective_final: 1.0,
                dead: false,
            })
            .collect();
        let style = GridStyle::default();
        let img = compose_grid(&fake, &style);
        assert_eq!(img.dimensions(), (6 * 100 + 5 * 4, 4 * 100 + 3 * 4));
    }

    #[test]
    fn single_channel_grid_is_its_tile() {
        let m = tiny_model(3);
        let style = GridStyle {
            tile: 24,
            label_scale: 1,
            ..GridStyle::default()
        };
        let grid = visualize_layer_grid(&m, "b", &[1], &fast(), &style).unwrap();
        assert_eq!((grid.rows, grid.columns), (1, 1));
        assert_eq!(grid.image, render_tile(&grid.tiles[0], &style));
    }

    #[test]
    fn dead_channel_tile_carries_marker() {
        let mut m = tiny_model(3);
        m.network.conv_weights_mut(1).row_mut(2).fill(0.0);
        m.network.conv_bias_mut(1)[2] = 0.0;
        let style = GridStyle {
            tile: 40,
            gap: 2,
            label_scale: 1,
            columns: 6,
        };
        let grid = visualize_layer_grid(&m, "b", &[0, 2], &fast(), &style).unwrap();
        assert!(grid.tiles[1].dead);
        let marker = (42..82u32)
            .flat_map(|x| (0..40u32).map(move |y| (x, y)))
            .filter(|&(x, y)| *grid.image.get_pixel(x, y) == DEAD_MARK)
            .count();
        assert!(marker > 20, "marker pixels: {marker}");
        assert_eq!(*grid.image.get_pixel(42 + 39, 2), DEAD_FILL);
    }

    #[test]
    fn channel_out_of_range() {
        let m = tiny_model(3);
        let r = visualize_layer_grid(&m, "b", &[7], &fast(), &GridStyle::default());
        assert!(matches!(r, Err(Error::OutOfRange { .. })));
    }
}
