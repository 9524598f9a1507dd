//! CNN definition, training, evaluation, checkpoints and feature export.

mod checkpoint;
mod features;
mod network;
mod tensor;
mod train;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use features::{
    dead_channel_report, dead_channels, extract_feature_vectors, feature_id_of, feature_index,
    parse_feature_name, FeatureId, FeatureMap, FeatureRow, FeatureTable,
};
pub use network::{softmax, BlockSpec, ModelConfig, Network, Preset};
pub use tensor::Tensor;
pub use train::{train, HyperParams, TrainMetrics};

use crate::cellcrop::{CellImage, DatasetManifest, Split};
use crate::error::{Error, Result};

/// `(H, W, C)` of a layer output.
pub type LayerShape = (usize, usize, usize);

/// Per-channel input standardization applied to `[0, 1]` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// A network together with everything needed to interpret its inputs and
/// outputs. Immutable once training has finished.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub class_order: Vec<String>,
    pub normalization: Normalization,
    pub train_metrics: Option<TrainMetrics>,
}

/// Untrained model with deterministic initialization from `config.seed`.
pub fn build_model(config: ModelConfig, n_classes: usize) -> Result<TrainedModel> {
    let channels = config.input_channels;
    let network = Network::new(config, n_classes)?;
    Ok(TrainedModel {
        network,
        class_order: (0..n_classes).map(|i| format!("class{i}")).collect(),
        normalization: Normalization::identity(channels),
        train_metrics: None,
    })
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn feature_layer(&self) -> &str {
        &self.config().feature_layer
    }

    pub fn layer_shape(&self, layer: &str) -> Result<LayerShape> {
        self.config().layer_shape(layer)
    }

    /// Standardized `C × H × W` network input for an RGB image.
    pub fn image_to_tensor(&self, image: &RgbImage) -> Result<Tensor> {
        let cfg = self.config();
        let (w, h) = image.dimensions();
        if (h as usize, w as usize) != (cfg.input_height, cfg.input_width) || cfg.input_channels != 3 {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_height * cfg.input_width * cfg.input_channels,
                got: (w * h * 3) as usize,
            });
        }
        let mut t = Tensor::zeros(3, h as usize, w as usize);
        for (x, y, p) in image.enumerate_pixels() {
            for c in 0..3 {
                let v = self.normalization.normalize(c, p[c] as f64 / 255.0);
                t.set(c, y as usize, x as usize, v);
            }
        }
        Ok(t)
    }

    /// Post-ReLU activations of `layer_name` for an already standardized
    /// input tensor.
    pub fn forward_tensor_features(&self, input: &Tensor, layer_name: &str) -> Result<FeatureMap> {
        let block = self.config().block_index(layer_name)?;
        let out = self.network.forward_to(input, block)?;
        Ok(chw_to_feature_map(layer_name, &out))
    }

    pub fn forward_features(&self, image: &CellImage, layer_name: &str) -> Result<FeatureMap> {
        self.config().block_index(layer_name)?;
        let input = self.image_to_tensor(image.pixels())?;
        self.forward_tensor_features(&input, layer_name)
    }

    pub fn logits(&self, image: &CellImage) -> Result<Vec<f64>> {
        self.network.logits(&self.image_to_tensor(image.pixels())?)
    }
}

pub(crate) fn chw_to_feature_map(layer_name: &str, t: &Tensor) -> FeatureMap {
    let (c, h, w) = t.shape();
    let mut values = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                values[(y * w + x) * c + ch] = t.get(ch, y, x);
            }
        }
    }
    FeatureMap::from_values(layer_name, (h, w, c), values)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that assigns a class index to a crop.
pub trait Classifier {
    fn predict(&self, image: &CellImage) -> Result<usize>;
}

impl Classifier for TrainedModel {
    fn predict(&self, image: &CellImage) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }
}

/// Fraction of `split` images classified correctly.
pub fn evaluate<M: Classifier + Sync>(model: &M, manifest: &DatasetManifest, split: Split) -> Result<f64> {
    let images = manifest.load_split(split)?;
    accuracy_on(model, &images).ok_or_else(|| Error::EmptySplit(split.as_str().into()))?
}

pub(crate) fn accuracy_on<M: Classifier + Sync>(model: &M, images: &[(CellImage, usize)]) -> Option<Result<f64>> {
    use rayon::prelude::*;
    if images.is_empty() {
        return None;
    }
    let correct: Result<Vec<bool>> = images
        .par_iter()
        .map(|(img, label)| Ok(model.predict(img)? == *label))
        .collect();
    Some(correct.map(|c| c.iter().filter(|&&ok| ok).count() as f64 / images.len() as f64))
}
