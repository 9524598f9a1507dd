use serde::{Deserialize, Serialize};

/// Dense activation tensor stored channel-major (`C × H × W`).
///
/// This is the layout the network computes in. Public feature maps are
/// exposed in `H × W × C` order through [`crate::model::FeatureMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Cyclic translation by `(dy, dx)`: output `(y, x)` takes input
    /// `(y - dy, x - dx)` modulo the spatial size.
    pub fn roll(&self, dy: isize, dx: isize) -> Tensor {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = Tensor::zeros(self.channels, self.height, self.width);
        for c in 0..self.channels {
            for y in 0..h {
                let sy = (y - dy).rem_euclid(h) as usize;
                for x in 0..w {
                    let sx = (x - dx).rem_euclid(w) as usize;
                    out.set(c, y as usize, x as usize, self.get(c, sy, sx));
                }
            }
        }
        out
    }
}
