//! Checkpoint directory layout:
//!
//! ```text
//! config.json         model config and class count
//! weights.bin         flat parameters, little-endian f64
//! normalization.json  per-channel mean/std of the training pixels
//! classes.json        class order
//! metrics.json        training metrics (optional)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network, Normalization, TrainMetrics, TrainedModel};
use crate::error::{Error, IoContext, Result};

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    #[serde(flatten)]
    config: ModelConfig,
    n_classes: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        write_json(
            &dir.join("config.json"),
            &StoredConfig {
                config: self.config().clone(),
                n_classes: self.network.n_classes(),
            },
        )?;
        let bytes: Vec<u8> = self.network.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        let weights = dir.join("weights.bin");
        std::fs::write(&weights, bytes).at(&weights)?;
        write_json(&dir.join("normalization.json"), &self.normalization)?;
        write_json(&dir.join("classes.json"), &self.class_order)?;
        let metrics = dir.join("metrics.json");
        match &self.train_metrics {
            Some(m) => write_json(&metrics, m)?,
            None if metrics.exists() => std::fs::remove_file(&metrics).at(&metrics)?,
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stored: StoredConfig = read_json(&dir.join("config.json"))?;
        let mut network = Network::new(stored.config, stored.n_classes)?;
        let weights = dir.join("weights.bin");
        let bytes = std::fs::read(&weights).at(&weights)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format {
                path: weights,
                reason: "weight blob is not a whole number of f64 values".into(),
            });
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        network.set_params(params)?;
        let normalization: Normalization = read_json(&dir.join("normalization.json"))?;
        let class_order: Vec<String> = read_json(&dir.join("classes.json"))?;
        if class_order.len() != network.n_classes() {
            return Err(Error::Format {
                path: dir.join("classes.json"),
                reason: "class count does not match the network head".into(),
            });
        }
        let metrics = dir.join("metrics.json");
        let train_metrics: Option<TrainMetrics> = if metrics.exists() {
            Some(read_json(&metrics)?)
        } else {
            None
        };
        Ok(Self {
            network,
            class_order,
            normalization,
            train_metrics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn checkpoint_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = build_model(ModelConfig::cnn4(3), 2).unwrap();
        m.normalization = Normalization {
            mean: vec![0.1, 0.2, 0.3],
            std: vec![0.5, 0.25, 0.125],
        };
        m.class_order = vec!["blue".into(), "pink".into()];
        m.train_metrics = Some(TrainMetrics {
            epochs: 3,
            final_loss: Some(0.25),
            final_train_acc: 1.0,
            final_test_acc: Some(0.975),
        });
        m.save(tmp.path()).unwrap();
        assert_eq!(TrainedModel::load(tmp.path()).unwrap(), m);
    }
}
