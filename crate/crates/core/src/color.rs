//! HSV conversion and hue-band helpers shared by cell detection, the
//! synthetic generator and visualization checks.

use serde::{Deserialize, Serialize};

/// Converts 8-bit RGB to `(hue in degrees [0, 360), saturation, value)`.
/// Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    rgb_f_to_hsv([
        rgb[0] as f64 / 255.0,
        rgb[1] as f64 / 255.0,
        rgb[2] as f64 / 255.0,
    ])
}

pub fn rgb_f_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h.rem_euclid(360.0), s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}

/// A closed interval of hues in degrees. `lo > hi` wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueBand {
    pub lo: f64,
    pub hi: f64,
}

impl HueBand {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// Band of half-width `half` around `center`.
    pub fn around(center: f64, half: f64) -> Self {
        Self {
            lo: (center - half).rem_euclid(360.0),
            hi: (center + half).rem_euclid(360.0),
        }
    }

    pub fn contains(&self, hue: f64) -> bool {
        let h = hue.rem_euclid(360.0);
        if self.lo <= self.hi {
            h >= self.lo && h <= self.hi
        } else {
            h >= self.lo || h <= self.hi
        }
    }
}

impl std::str::FromStr for HueBand {
    type Err = String;

    /// Parses `LO:HI` in degrees.
    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("hue band `{s}` must be LO:HI"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad hue `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad hue `{hi}`"))?;
        Ok(Self::new(lo, hi))
    }
}

/// Saturation-weighted circular mean of the hue of `pixels` (RGB in
/// `[0, 1]`). Returns `None` when the image is achromatic.
pub fn mean_hue(pixels: impl IntoIterator<Item = [f64; 3]>) -> Option<f64> {
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in pixels {
        let (h, s, _) = rgb_f_to_hsv(p);
        let rad = h.to_radians();
        sx += s * rad.cos();
        sy += s * rad.sin();
    }
    if sx.hypot(sy) < 1e-9 {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}
