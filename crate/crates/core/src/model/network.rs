//! A small convolutional classifier with hand-written backpropagation.
//!
//! Each block is `conv (stride 1, zero padding) -> ReLU -> optional 2×2 max
//! pool`; the head is global average pooling followed by a linear layer.
//! Convolutions run as im2col + GEMM. All parameters live in one flat
//! buffer so the optimizer and checkpoint code can treat them uniformly.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Cnn4,
    Cnn6,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn4" => Ok(Preset::Cnn4),
            "cnn6" => Ok(Preset::Cnn6),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: usize,
    pub pool: bool,
}

impl BlockSpec {
    pub fn new(name: &str, out_channels: usize, kernel_size: usize, padding: usize, pool: bool) -> Self {
        Self {
            name: name.to_string(),
            out_channels,
            kernel_size,
            padding,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Layer whose activations feed the decision tree.
    pub feature_layer: String,
    pub seed: u64,
}

impl ModelConfig {
    /// Four blocks, 16→32→64→128 channels. Three pooled blocks take
    /// 100 → 50 → 25 → 12 and the unpadded fourth block lands on the
    /// 10×10×128 layer `4M`.
    pub fn cnn4(seed: u64) -> Self {
        Self {
            preset: Preset::Cnn4,
            input_height: 100,
            input_width: 100,
            input_channels: 3,
            blocks: vec![
                BlockSpec::new("1", 16, 3, 1, true),
                BlockSpec::new("2", 32, 3, 1, true),
                BlockSpec::new("3", 64, 3, 1, true),
                BlockSpec::new("4M", 128, 3, 0, false),
            ],
            feature_layer: "4M".into(),
            seed,
        }
    }

    /// Six blocks, 16→32→64→64→128→128 channels; block `5M` is 10×10×128.
    pub fn cnn6(seed: u64) -> Self {
        Self {
            preset: Preset::Cnn6,
            input_height: 100,
            input_width: 100,
            input_channels: 3,
            blocks: vec![
                BlockSpec::new("1", 16, 3, 1, true),
                BlockSpec::new("2", 32, 3, 1, true),
                BlockSpec::new("3", 64, 3, 1, true),
                BlockSpec::new("4", 64, 3, 1, false),
                BlockSpec::new("5M", 128, 3, 0, false),
                BlockSpec::new("6", 128, 3, 1, false),
            ],
            feature_layer: "5M".into(),
            seed,
        }
    }

    pub fn from_preset(preset: Preset, seed: u64) -> Result<Self> {
        match preset {
            Preset::Cnn4 => Ok(Self::cnn4(seed)),
            Preset::Cnn6 => Ok(Self::cnn6(seed)),
            Preset::Custom => Err(Error::Config(
                "custom preset needs an explicit block list".into(),
            )),
        }
    }

    pub fn block_index(&self, layer: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// `(H, W, C)` of every block output, in order.
    pub fn layer_shapes(&self) -> Vec<(String, (usize, usize, usize))> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = h + 2 * b.padding + 1 - b.kernel_size;
            w = w + 2 * b.padding + 1 - b.kernel_size;
            if b.pool {
                h /= 2;
                w /= 2;
            }
            out.push((b.name.clone(), (h, w, b.out_channels)));
        }
        out
    }

    pub fn layer_shape(&self, layer: &str) -> Result<(usize, usize, usize)> {
        let i = self.block_index(layer)?;
        Ok(self.layer_shapes()[i].1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("model has no blocks".into()));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for b in &self.blocks {
            if b.kernel_size == 0 || b.out_channels == 0 {
                return Err(Error::Config(format!("block `{}` is degenerate", b.name)));
            }
            if h + 2 * b.padding < b.kernel_size || w + 2 * b.padding < b.kernel_size {
                return Err(Error::Config(format!(
                    "block `{}` kernel larger than its input",
                    b.name
                )));
            }
            h = h + 2 * b.padding + 1 - b.kernel_size;
            w = w + 2 * b.padding + 1 - b.kernel_size;
            if b.pool {
                h /= 2;
                w /= 2;
            }
            if h == 0 || w == 0 {
                return Err(Error::Config(format!("block `{}` output is empty", b.name)));
            }
        }
        self.block_index(&self.feature_layer)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayout {
    in_c: usize,
    out_c: usize,
    k: usize,
    pad: usize,
    pool: bool,
    in_h: usize,
    in_w: usize,
    conv_h: usize,
    conv_w: usize,
    out_h: usize,
    out_w: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvLayout {
    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }
}

/// Cached intermediates of one block for the backward pass.
pub(crate) struct BlockCache {
    cols: Array2<f64>,
    /// Post-ReLU activations before pooling, `out_c × conv_h·conv_w`.
    act: Vec<f64>,
    /// For pooled blocks: flat index into `act` of each pooled maximum.
    pool_idx: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    n_classes: usize,
    params: Vec<f64>,
    layout: Vec<ConvLayout>,
    head_w_off: usize,
    head_b_off: usize,
}

impl Network {
    /// Builds a network with He-normal weights and zero biases drawn from
    /// `config.seed`.
    pub fn new(config: ModelConfig, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        config.validate()?;
        let mut layout = Vec::new();
        let (mut h, mut w, mut c) = (config.input_height, config.input_width, config.input_channels);
        let mut off = 0;
        for b in &config.blocks {
            let conv_h = h + 2 * b.padding + 1 - b.kernel_size;
            let conv_w = w + 2 * b.padding + 1 - b.kernel_size;
            let (out_h, out_w) = if b.pool { (conv_h / 2, conv_w / 2) } else { (conv_h, conv_w) };
            let w_off = off;
            off += b.out_channels * c * b.kernel_size * b.kernel_size;
            let b_off = off;
            off += b.out_channels;
            layout.push(ConvLayout {
                in_c: c,
                out_c: b.out_channels,
                k: b.kernel_size,
                pad: b.padding,
                pool: b.pool,
                in_h: h,
                in_w: w,
                conv_h,
                conv_w,
                out_h,
                out_w,
                w_off,
                b_off,
            });
            h = out_h;
            w = out_w;
            c = b.out_channels;
        }
        let head_w_off = off;
        off += n_classes * c;
        let head_b_off = off;
        off += n_classes;

        let mut params = vec![0.0; off];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for l in &layout {
            let std = (2.0 / l.patch() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for p in &mut params[l.w_off..l.b_off] {
                *p = normal.sample(&mut rng);
            }
        }
        let normal = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("finite std");
        for p in &mut params[head_w_off..head_b_off] {
            *p = normal.sample(&mut rng);
        }

        Ok(Self {
            config,
            n_classes,
            params,
            layout,
            head_w_off,
            head_b_off,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.layout.len()
    }

    /// Weights of block `i` as `out_channels × (in_channels·k·k)`, with the
    /// patch index ordered `(in_channel, ky, kx)`.
    pub fn conv_weights_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let l = &self.layout[i];
        let (rows, cols) = (l.out_c, l.patch());
        ArrayViewMut2::from_shape((rows, cols), &mut self.params[l.w_off..l.b_off]).expect("layout")
    }

    pub fn conv_bias_mut(&mut self, i: usize) -> &mut [f64] {
        let l = &self.layout[i];
        &mut self.params[l.b_off..l.b_off + l.out_c]
    }

    /// Head weights as `n_classes × last_channels`.
    pub fn head_weights_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let c = self.layout.last().expect("blocks").out_c;
        ArrayViewMut2::from_shape(
            (self.n_classes, c),
            &mut self.params[self.head_w_off..self.head_b_off],
        )
        .expect("layout")
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let n = self.n_classes;
        &mut self.params[self.head_b_off..self.head_b_off + n]
    }

    fn conv_weights(&self, i: usize) -> ArrayView2<'_, f64> {
        let l = &self.layout[i];
        ArrayView2::from_shape((l.out_c, l.patch()), &self.params[l.w_off..l.b_off]).expect("layout")
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let want = (
            self.config.input_channels,
            self.config.input_height,
            self.config.input_width,
        );
        if input.shape() != want {
            return Err(Error::DimensionMismatch {
                expected: want.0 * want.1 * want.2,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Runs blocks `0..=last`, optionally keeping caches for backprop.
    pub(crate) fn forward_blocks(
        &self,
        input: &Tensor,
        last: usize,
        keep: bool,
    ) -> Result<(Tensor, Vec<BlockCache>)> {
        self.check_input(input)?;
        let mut caches = Vec::new();
        let mut x = input.data.clone();
        let mut out_shape = (0, 0, 0);
        for (i, l) in self.layout.iter().enumerate().take(last + 1) {
            let cols = im2col(&x, l);
            let mut z = Array2::<f64>::zeros((l.out_c, l.conv_h * l.conv_w));
            general_mat_mul(1.0, &self.conv_weights(i), &cols, 0.0, &mut z);
            let bias = &self.params[l.b_off..l.b_off + l.out_c];
            let mut act = z.into_raw_vec_and_offset().0;
            let plane = l.conv_h * l.conv_w;
            for (o, &b) in bias.iter().enumerate() {
                for v in &mut act[o * plane..(o + 1) * plane] {
                    *v = (*v + b).max(0.0);
                }
            }
            let (next, pool_idx) = if l.pool { max_pool(&act, l) } else { (act.clone(), Vec::new()) };
            out_shape = (l.out_c, l.out_h, l.out_w);
            if keep {
                caches.push(BlockCache { cols, act, pool_idx });
            }
            x = next;
        }
        Ok((Tensor::from_vec(out_shape.0, out_shape.1, out_shape.2, x), caches))
    }

    /// Output of block `last`.
    pub fn forward_to(&self, input: &Tensor, last: usize) -> Result<Tensor> {
        Ok(self.forward_blocks(input, last, false)?.0)
    }

    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        let (features, _) = self.forward_blocks(input, self.layout.len() - 1, false)?;
        Ok(self.head(&global_avg_pool(&features)))
    }

    fn head(&self, pooled: &[f64]) -> Vec<f64> {
        let c = pooled.len();
        (0..self.n_classes)
            .map(|k| {
                let w = &self.params[self.head_w_off + k * c..self.head_w_off + (k + 1) * c];
                self.params[self.head_b_off + k] + w.iter().zip(pooled).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the output of the last
    /// cached block) through the cached blocks. Parameter gradients are
    /// accumulated into `param_grads` when given; the input gradient is
    /// returned when requested.
    pub(crate) fn backward_blocks(
        &self,
        caches: &[BlockCache],
        grad_out: Vec<f64>,
        mut param_grads: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Tensor> {
        let mut g = grad_out;
        for i in (0..caches.len()).rev() {
            let l = &self.layout[i];
            let cache = &caches[i];
            let plane = l.conv_h * l.conv_w;
            let mut gz = if l.pool {
                let mut gz = vec![0.0; l.out_c * plane];
                for (j, &idx) in cache.pool_idx.iter().enumerate() {
                    gz[idx as usize] += g[j];
                }
                gz
            } else {
                g
            };
            for (v, &a) in gz.iter_mut().zip(&cache.act) {
                if a <= 0.0 {
                    *v = 0.0;
                }
            }
            let gz = Array2::from_shape_vec((l.out_c, plane), gz).expect("shape");
            if let Some(pg) = param_grads.as_deref_mut() {
                let mut dw = ArrayViewMut2::from_shape((l.out_c, l.patch()), &mut pg[l.w_off..l.b_off])
                    .expect("layout");
                general_mat_mul(1.0, &gz, &cache.cols.t(), 1.0, &mut dw);
                for (o, row) in gz.rows().into_iter().enumerate() {
                    pg[l.b_off + o] += row.sum();
                }
            }
            if i == 0 && !want_input_grad {
                return None;
            }
            let mut dcols = Array2::<f64>::zeros((l.patch(), plane));
            general_mat_mul(1.0, &self.conv_weights(i).t(), &gz, 0.0, &mut dcols);
            g = col2im(&dcols, l);
        }
        let l = &self.layout[0];
        Some(Tensor::from_vec(l.in_c, l.in_h, l.in_w, g))
    }

    /// Softmax cross-entropy loss for one sample; accumulates parameter
    /// gradients and returns `(loss, logits)`.
    pub(crate) fn loss_and_grad(&self, input: &Tensor, label: usize, grads: &mut [f64]) -> Result<(f64, Vec<f64>)> {
        let last = self.layout.len() - 1;
        let (features, caches) = self.forward_blocks(input, last, true)?;
        let pooled = global_avg_pool(&features);
        let logits = self.head(&pooled);
        let probs = softmax(&logits);
        let loss = -probs[label].max(1e-300).ln();

        let c = pooled.len();
        let mut dpooled = vec![0.0; c];
        for k in 0..self.n_classes {
            let d = probs[k] - if k == label { 1.0 } else { 0.0 };
            grads[self.head_b_off + k] += d;
            let row = self.head_w_off + k * c;
            for j in 0..c {
                grads[row + j] += d * pooled[j];
                dpooled[j] += d * self.params[row + j];
            }
        }
        let hw = features.height * features.width;
        let mut gfeat = vec![0.0; features.len()];
        for (j, dp) in dpooled.iter().enumerate() {
            let v = dp / hw as f64;
            gfeat[j * hw..(j + 1) * hw].iter_mut().for_each(|g| *g = v);
        }
        self.backward_blocks(&caches, gfeat, Some(grads), false);
        Ok((loss, logits))
    }
}

pub(crate) fn global_avg_pool(t: &Tensor) -> Vec<f64> {
    let hw = (t.height * t.width) as f64;
    (0..t.channels).map(|c| t.plane(c).iter().sum::<f64>() / hw).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn im2col(x: &[f64], l: &ConvLayout) -> Array2<f64> {
    let (k, pad) = (l.k, l.pad as isize);
    let n = l.conv_h * l.conv_w;
    let mut cols = vec![0.0; l.patch() * n];
    for c in 0..l.in_c {
        let src = &x[c * l.in_h * l.in_w..(c + 1) * l.in_h * l.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..l.conv_h {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= l.in_h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * l.in_w..(iy as usize + 1) * l.in_w];
                    let drow = &mut dst[oy * l.conv_w..(oy + 1) * l.conv_w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < l.in_w as isize {
                            *d = srow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((l.patch(), n), cols).expect("shape")
}

fn col2im(cols: &Array2<f64>, l: &ConvLayout) -> Vec<f64> {
    let (k, pad) = (l.k, l.pad as isize);
    let n = l.conv_h * l.conv_w;
    let cols = cols.as_slice().expect("standard layout");
    let mut x = vec![0.0; l.in_c * l.in_h * l.in_w];
    for c in 0..l.in_c {
        let dst = &mut x[c * l.in_h * l.in_w..(c + 1) * l.in_h * l.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..l.conv_h {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= l.in_h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * l.in_w..(iy as usize + 1) * l.in_w];
                    let srow = &src[oy * l.conv_w..(oy + 1) * l.conv_w];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < l.in_w as isize {
                            drow[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// 2×2 stride-2 max pool (floor). Ties keep the first element in
/// row-major window order.
fn max_pool(act: &[f64], l: &ConvLayout) -> (Vec<f64>, Vec<u32>) {
    let mut out = Vec::with_capacity(l.out_c * l.out_h * l.out_w);
    let mut idx = Vec::with_capacity(out.capacity());
    let plane = l.conv_h * l.conv_w;
    for c in 0..l.out_c {
        for oy in 0..l.out_h {
            for ox in 0..l.out_w {
                let mut best = c * plane + (2 * oy) * l.conv_w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = c * plane + (2 * oy + dy) * l.conv_w + 2 * ox + dx;
                    if act[j] > act[best] {
                        best = j;
                    }
                }
                out.push(act[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}
