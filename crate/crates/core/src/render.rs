//! Minimal raster drawing for tile labels and markers.

use image::{Rgb, RgbImage};

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

pub const LABEL_FG: Rgb<u8> = Rgb([255, 255, 255]);
pub const LABEL_BG: Rgb<u8> = Rgb([0, 0, 0]);

pub fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for yy in y.max(0)..(y + h).min(ih) {
        for xx in x.max(0)..(x + w).min(iw) {
            img.put_pixel(xx as u32, yy as u32, color);
        }
    }
}

/// Size in pixels of a number drawn by [`draw_number`], including the
/// one-pixel padding box.
pub fn number_size(n: usize, scale: u32) -> (u32, u32) {
    let digits = n.to_string().len() as u32;
    ((digits * 4 + 1) * scale, 7 * scale)
}

/// Draws `n` in white on a black box whose bottom-left corner is `(x, y_bottom)`.
pub fn draw_number(img: &mut RgbImage, x: i64, y_bottom: i64, n: usize, scale: u32) {
    let (bw, bh) = number_size(n, scale);
    let s = scale as i64;
    let top = y_bottom - bh as i64;
    fill_rect(img, x, top, bw as i64, bh as i64, LABEL_BG);
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x + s + i as i64 * 4 * s;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    fill_rect(img, gx + col * s, top + s + row as i64 * s, s, s, LABEL_FG);
                }
            }
        }
    }
}

/// Two diagonals across the rectangle.
pub fn draw_cross(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    let n = w.max(h);
    for i in 0..n {
        let dx = i * w / n;
        let dy = i * h / n;
        fill_rect(img, x + dx, y + dy, 2, 2, color);
        fill_rect(img, x + w - 1 - dx - 1, y + dy, 2, 2, color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_box_fits_and_has_ink() {
        let mut img = RgbImage::from_pixel(30, 20, Rgb([100, 100, 100]));
        draw_number(&mut img, 2, 18, 44, 1);
        let (w, h) = number_size(44, 1);
        assert_eq!((w, h), (9, 7));
        let inked = img.pixels().filter(|p| **p == LABEL_FG).count();
        assert!(inked > 10);
        assert_eq!(*img.get_pixel(2, 11), LABEL_BG);
        assert_eq!(*img.get_pixel(0, 0), Rgb([100, 100, 100]));
    }
}
