//! Activation maximization: synthesize the input that most excites one
//! channel of a layer, starting from low-contrast noise.
//!
//! The objective is the channel's activation averaged over all spatial
//! positions (or, optionally, its activation at one position). Ascent runs
//! in the model's standardized input space using normalized gradient steps
//! with backtracking, so the unregularized objective never decreases.

mod cache;
mod grid;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::{VizCache, VizKey, VizLookup};
pub use grid::{render_tile, visualize_layer_grid, GridStyle, LayerGrid};

use crate::error::{Error, Result};
use crate::model::{Tensor, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizParams {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Maximum random translation applied before each gradient evaluation.
    pub jitter_pixels: usize,
    pub tv_weight: f64,
    pub l2_weight: f64,
    pub dead_threshold: f64,
}

impl Default for VizParams {
    fn default() -> Self {
        Self {
            steps: 256,
            step_size: 0.05,
            seed: 0,
            jitter_pixels: 2,
            tv_weight: 1e-3,
            l2_weight: 1e-4,
            dead_threshold: 1e-4,
        }
    }
}

impl VizParams {
    /// Pure ascent: no jitter and no penalties.
    pub fn unregularized(self) -> Self {
        Self {
            jitter_pixels: 0,
            tv_weight: 0.0,
            l2_weight: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("visualization needs at least one step".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size {} must be positive", self.step_size)));
        }
        if self.tv_weight < 0.0 || self.l2_weight < 0.0 || self.dead_threshold < 0.0 {
            return Err(Error::Config("regularizer weights and dead threshold must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// What to maximize.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VizTarget {
    pub layer: String,
    pub channel: usize,
    /// `Some((row, col))` maximizes the activation at that position only.
    pub position: Option<(usize, usize)>,
}

impl VizTarget {
    pub fn channel(layer: &str, channel: usize) -> Self {
        Self {
            layer: layer.to_string(),
            channel,
            position: None,
        }
    }

    pub fn positioned(layer: &str, row: usize, col: usize, channel: usize) -> Self {
        Self {
            layer: layer.to_string(),
            channel,
            position: Some((row, col)),
        }
    }
}

/// Result of activation maximization. Pixels are RGB in `[0, 1]`, `H × W × 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub layer: String,
    pub channel: usize,
    pub position: Option<(usize, usize)>,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub dead: bool,
}

impl FeatureImage {
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        })
    }
}

fn check_target(model: &TrainedModel, target: &VizTarget) -> Result<usize> {
    let block = model.config().block_index(&target.layer)?;
    let (h, w, c) = model.layer_shape(&target.layer)?;
    if target.channel >= c {
        return Err(Error::OutOfRange {
            what: "channel",
            value: target.channel,
            limit: c,
        });
    }
    if let Some((r, col)) = target.position {
        if r >= h {
            return Err(Error::OutOfRange { what: "row", value: r, limit: h });
        }
        if col >= w {
            return Err(Error::OutOfRange { what: "col", value: col, limit: w });
        }
    }
    Ok(block)
}

fn objective_of(out: &Tensor, target: &VizTarget) -> f64 {
    match target.position {
        None => {
            let plane = out.plane(target.channel);
            plane.iter().sum::<f64>() / plane.len() as f64
        }
        Some((r, c)) => out.get(target.channel, r, c),
    }
}

/// Objective value for a standardized input tensor.
pub fn objective(model: &TrainedModel, input: &Tensor, target: &VizTarget) -> Result<f64> {
    let block = check_target(model, target)?;
    let out = model.network.forward_to(input, block)?;
    Ok(objective_of(&out, target))
}

/// Objective value and its gradient with respect to the standardized input.
pub fn objective_and_grad(model: &TrainedModel, input: &Tensor, target: &VizTarget) -> Result<(f64, Tensor)> {
    let block = check_target(model, target)?;
    let (out, caches) = model.network.forward_blocks(input, block, true)?;
    let value = objective_of(&out, target);
    let mut g = vec![0.0; out.len()];
    match target.position {
        None => {
            let hw = out.height * out.width;
            let v = 1.0 / hw as f64;
            g[target.channel * hw..(target.channel + 1) * hw].iter_mut().for_each(|x| *x = v);
        }
        Some((r, c)) => g[out.index(target.channel, r, c)] = 1.0,
    }
    let grad = model
        .network
        .backward_blocks(&caches, g, None, true)
        .expect("input gradient requested");
    Ok((value, grad))
}

/// Mean activation of `channel` over all positions of `layer`.
pub fn channel_objective(model: &TrainedModel, input: &Tensor, layer: &str, channel: usize) -> Result<f64> {
    objective(model, input, &VizTarget::channel(layer, channel))
}

/// Gradient of [`channel_objective`] with respect to the input tensor.
pub fn channel_objective_grad(model: &TrainedModel, input: &Tensor, layer: &str, channel: usize) -> Result<Tensor> {
    Ok(objective_and_grad(model, input, &VizTarget::channel(layer, channel))?.1)
}

/// Gradient of the mean squared neighbour difference.
fn tv_grad(x: &Tensor, out: &mut [f64], weight: f64) {
    let n = x.len() as f64;
    let k = 2.0 * weight / n;
    for c in 0..x.channels {
        for y in 0..x.height {
            for xx in 0..x.width {
                let i = x.index(c, y, xx);
                if xx + 1 < x.width {
                    let d = x.data[i + 1] - x.data[i];
                    out[i + 1] -= k * d;
                    out[i] += k * d;
                }
                if y + 1 < x.height {
                    let j = x.index(c, y + 1, xx);
                    let d = x.data[j] - x.data[i];
                    out[j] -= k * d;
                    out[i] += k * d;
                }
            }
        }
    }
}

const MAX_HALVINGS: usize = 12;

/// Runs the ascent and also returns the objective after every step.
pub fn visualize_feature_traced(
    model: &TrainedModel,
    target: &VizTarget,
    params: &VizParams,
) -> Result<(FeatureImage, Vec<f64>)> {
    params.validate()?;
    check_target(model, target)?;
    let cfg = model.config();
    let (ch, h, w) = (cfg.input_channels, cfg.input_height, cfg.input_width);
    let norm = &model.normalization;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut x = Tensor::zeros(ch, h, w);
    for c in 0..ch {
        for v in &mut x.data[c * h * w..(c + 1) * h * w] {
            *v = norm.normalize(c, rng.random_range(0.45..0.55));
        }
    }
    let lo: Vec<f64> = (0..ch).map(|c| norm.normalize(c, 0.0)).collect();
    let hi: Vec<f64> = (0..ch).map(|c| norm.normalize(c, 1.0)).collect();

    let initial = objective(model, &x, target)?;
    let mut current = initial;
    let mut trace = vec![initial];
    let j = params.jitter_pixels as i64;

    for _ in 0..params.steps {
        let (dy, dx) = if j > 0 {
            (rng.random_range(-j..=j), rng.random_range(-j..=j))
        } else {
            (0, 0)
        };
        let (dy, dx) = (dy as isize, dx as isize);
        let shifted = if j > 0 { x.roll(dy, dx) } else { x.clone() };
        let (_, g) = objective_and_grad(model, &shifted, target)?;
        let mut g = if j > 0 { g.roll(-dy, -dx).data } else { g.data };
        // No signal from the feature: leave the image alone rather than
        // letting the penalties alone reshape it.
        if g.iter().all(|&v| v == 0.0) {
            if j == 0 {
                break;
            }
            trace.push(current);
            continue;
        }
        if params.tv_weight > 0.0 {
            tv_grad(&x, &mut g, params.tv_weight);
        }
        if params.l2_weight > 0.0 {
            let k = 2.0 * params.l2_weight / x.len() as f64;
            g.iter_mut().zip(&x.data).for_each(|(gi, xi)| *gi -= k * xi);
        }
        let rms = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
        if !(rms > 1e-300 && rms.is_finite()) {
            trace.push(current);
            continue;
        }

        let mut alpha = params.step_size / rms;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = x.clone();
            let plane = h * w;
            for c in 0..ch {
                let range = c * plane..(c + 1) * plane;
                for (v, gi) in cand.data[range.clone()].iter_mut().zip(&g[range]) {
                    *v = (*v + alpha * gi).clamp(lo[c], hi[c]);
                }
            }
            let value = objective(model, &cand, target)?;
            if value >= current {
                x = cand;
                current = value;
                break;
            }
            alpha *= 0.5;
        }
        trace.push(current);
    }

    let mut pixels = vec![0.0; h * w * ch];
    for c in 0..ch {
        for y in 0..h {
            for xx in 0..w {
                pixels[(y * w + xx) * ch + c] = norm.denormalize(c, x.get(c, y, xx)).clamp(0.0, 1.0);
            }
        }
    }
    let image = FeatureImage {
        height: h,
        width: w,
        pixels,
        layer: target.layer.clone(),
        channel: target.channel,
        position: target.position,
        objective_initial: initial,
        objective_final: current,
        dead: current < params.dead_threshold,
    };
    Ok((image, trace))
}

/// Activation maximization for one channel (or positioned feature).
pub fn visualize_feature(model: &TrainedModel, target: &VizTarget, params: &VizParams) -> Result<FeatureImage> {
    Ok(visualize_feature_traced(model, target, params)?.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{build_model, BlockSpec, ModelConfig, Preset};

    pub(crate) fn tiny_model(seed: u64) -> TrainedModel {
        let cfg = ModelConfig {
            preset: Preset::Custom,
            input_height: 8,
            input_width: 8,
            input_channels: 3,
            blocks: vec![BlockSpec::new("a", 4, 3, 1, true), BlockSpec::new("b", 3, 3, 1, false)],
            feature_layer: "b".into(),
            seed,
        };
        build_model(cfg, 2).unwrap()
    }

    #[test]
    fn identity_kernel_closed_form() {
        let cfg = ModelConfig {
            preset: Preset::Custom,
            input_height: 6,
            input_width: 6,
            input_channels: 3,
            blocks: vec![BlockSpec::new("c", 1, 3, 1, false)],
            feature_layer: "c".into(),
            seed: 0,
        };
        let mut m = build_model(cfg, 2).unwrap();
        m.network.conv_weights_mut(0).fill(0.0);
        m.network.conv_weights_mut(0)[[0, 4]] = 1.0; // channel 0, centre tap
        for (v, b) in [(0.7, -0.2), (0.1, -0.3), (-0.4, 1.0)] {
            m.network.conv_bias_mut(0)[0] = b;
            let x = Tensor::filled(3, 6, 6, v);
            let got = channel_objective(&m, &x, "c", 0).unwrap();
            assert!((got - f64::max(v + b, 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_channel_has_zero_objective_and_gradient() {
        let mut m = tiny_model(4);
        m.network.conv_weights_mut(1).row_mut(2).fill(0.0);
        m.network.conv_bias_mut(1)[2] = 0.0;
        let x = Tensor::from_vec(3, 8, 8, (0..192).map(|i| (i as f64 * 0.37).sin()).collect());
        assert_eq!(channel_objective(&m, &x, "b", 2).unwrap(), 0.0);
        assert!(channel_objective_grad(&m, &x, "b", 2).unwrap().data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn objective_matches_feature_map_mean() {
        let m = build_model(ModelConfig::cnn4(9), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = Tensor::from_vec(3, 100, 100, (0..30000).map(|_| rng.random_range(-2.0..2.0)).collect());
            let fm = m.forward_tensor_features(&x, "4M").unwrap();
            let ch = rng.random_range(0..128);
            let mean = (0..10)
                .flat_map(|r| (0..10).map(move |c| (r, c)))
                .map(|(r, c)| fm.get(r, c, ch))
                .sum::<f64>()
                / 100.0;
            let obj = channel_objective(&m, &x, "4M", ch).unwrap();
            assert!((obj - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn bad_targets() {
        let m = tiny_model(1);
        let x = Tensor::zeros(3, 8, 8);
        assert!(matches!(channel_objective(&m, &x, "zz", 0), Err(Error::UnknownLayer(_))));
        assert!(matches!(channel_objective(&m, &x, "b", 3), Err(Error::OutOfRange { .. })));
        let t = VizTarget::positioned("b", 4, 0, 0);
        assert!(matches!(objective(&m, &x, &t), Err(Error::OutOfRange { what: "row", .. })));
    }

    #[test]
    fn ascent_is_monotone_and_deterministic() {
        let m = tiny_model(3);
        let params = VizParams {
            steps: 40,
            seed: 5,
            ..VizParams::default()
        }
        .unregularized();
        let target = VizTarget::channel("b", 1);
        let (img, trace) = visualize_feature_traced(&m, &target, &params).unwrap();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img, visualize_feature(&m, &target, &params).unwrap());
    }

    #[test]
    fn regularized_run_still_never_decreases_objective() {
        let m = tiny_model(8);
        let params = VizParams {
            steps: 30,
            tv_weight: 0.5,
            l2_weight: 0.1,
            jitter_pixels: 1,
            ..VizParams::default()
        };
        let (img, trace) = visualize_feature_traced(&m, &VizTarget::channel("b", 0), &params).unwrap();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(img.pixels.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zeroed_channel_is_dead_and_grey() {
        let mut m = tiny_model(2);
        m.network.conv_weights_mut(1).row_mut(0).fill(0.0);
        m.network.conv_bias_mut(1)[0] = 0.0;
        let img = visualize_feature(&m, &VizTarget::channel("b", 0), &VizParams::default()).unwrap();
        assert!(img.dead);
        assert_eq!(img.objective_final, 0.0);
        assert!(img.pixels.iter().all(|v| (0.45..=0.55).contains(v)));
    }

    #[test]
    fn invalid_params_rejected() {
        let m = tiny_model(2);
        let p = VizParams {
            steps: 0,
            ..VizParams::default()
        };
        assert!(visualize_feature(&m, &VizTarget::channel("b", 0), &p).is_err());
    }
}
