use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy_on, Normalization, Tensor, TrainedModel};
use crate::cellcrop::{CellImage, DatasetManifest, Split};
use crate::error::{Error, Result};

/// Minibatch SGD with momentum on softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Shuffling seed.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub final_train_acc: f64,
    /// Absent when the manifest has no test split.
    pub final_test_acc: Option<f64>,
}

/// Samples per gradient work unit. Fixed so the floating-point summation
/// order, and hence the trained weights, do not depend on thread count.
const CHUNK: usize = 4;

fn channel_stats(images: &[(CellImage, usize)]) -> Normalization {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut n = 0.0;
    for (img, _) in images {
        for p in img.pixels().pixels() {
            for c in 0..3 {
                let v = p[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = (0..3)
        .map(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-3))
        .collect();
    Normalization { mean, std }
}

pub fn train(mut model: TrainedModel, manifest: &DatasetManifest, hp: &HyperParams) -> Result<TrainedModel> {
    if hp.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if model.network.n_classes() != manifest.classes.len() {
        return Err(Error::Config(format!(
            "model has {} outputs but the manifest lists {} classes",
            model.network.n_classes(),
            manifest.classes.len()
        )));
    }
    let train_images = manifest.load_split(Split::Train)?;
    if train_images.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let test_images = manifest.load_split(Split::Test)?;

    model.class_order = manifest.classes.clone();
    model.normalization = channel_stats(&train_images);
    let inputs: Vec<(Tensor, usize)> = train_images
        .par_iter()
        .map(|(img, label)| Ok((model.image_to_tensor(img.pixels())?, *label)))
        .collect::<Result<_>>()?;

    let n_params = model.network.params().len();
    let mut velocity = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut final_loss = None;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let net = &model.network;
            let partials: Vec<(Vec<f64>, f64)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; n_params];
                    let mut loss = 0.0;
                    for &i in chunk {
                        let (x, y) = &inputs[i];
                        loss += net.loss_and_grad(x, *y, &mut g)?.0;
                    }
                    Ok((g, loss))
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for (g, l) in partials {
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(Error::DivergedTraining {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let params = model.network.params_mut();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hp.momentum * *v + g * scale + hp.weight_decay * *p;
                *p -= hp.learning_rate * *v;
            }
        }
        let mean_loss = epoch_loss / inputs.len() as f64;
        log::info!("epoch {}/{}: loss {mean_loss:.4}", epoch + 1, hp.epochs);
        if !mean_loss.is_finite() || model.network.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergedTraining { epoch, loss: mean_loss });
        }
        final_loss = Some(mean_loss);
    }

    let final_train_acc = accuracy_on(&model, &train_images).expect("non-empty")?;
    let final_test_acc = accuracy_on(&model, &test_images).transpose()?;
    model.train_metrics = Some(TrainMetrics {
        epochs: hp.epochs,
        final_loss,
        final_train_acc,
        final_test_acc,
    });
    Ok(model)
}
