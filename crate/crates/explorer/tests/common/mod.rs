use std::path::{Path, PathBuf};

use idt_core::cellcrop::Split;
use idt_core::dtree::TreeParams;
use idt_core::featviz::VizParams;
use idt_core::illuminate::{IlluminateOptions, Session, SessionConfig};
use idt_core::model::{build_model, BlockSpec, FeatureRow, FeatureTable, ModelConfig, Preset, TrainedModel};
use rand::{Rng, SeedableRng};

pub fn model() -> TrainedModel {
    let cfg = ModelConfig {
        preset: Preset::Custom,
        input_height: 8,
        input_width: 8,
        input_channels: 3,
        blocks: vec![BlockSpec::new("a", 4, 3, 1, true), BlockSpec::new("b", 3, 3, 1, false)],
        feature_layer: "b".into(),
        seed: 11,
    };
    build_model(cfg, 2).unwrap()
}

/// Rows alternate between the two classes; features 13 and 40 carry the label.
pub fn table(model: &TrainedModel, root: &Path, n: usize, split: Split, seed: u64) -> FeatureTable {
    let shape = model.layer_shape("b").unwrap();
    let width = shape.0 * shape.1 * shape.2;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for i in 0..n {
        let label = i % 2;
        let rel = PathBuf::from(format!("{}/c{label}_{i:03}.png", split.as_str()));
        let abs = root.join(&rel);
        std::fs::create_dir_all(abs.parent().unwrap()).unwrap();
        image::RgbImage::from_pixel(8, 8, image::Rgb([(i * 7) as u8, 40, 200])).save(&abs).unwrap();
        rows.push(FeatureRow { path: rel, label, split });
        for f in 0..width {
            let signal = if f == 13 || f == 40 { label as f64 } else { 0.0 };
            data.push(signal + rng.random_range(0.0..0.5));
        }
    }
    FeatureTable::new("b", shape, model.class_order.clone(), root.to_path_buf(), rows, data).unwrap()
}

/// A session under `tmp/session` with images under `tmp/data`.
pub fn session(tmp: &Path) -> Session {
    let m = model();
    let data = tmp.join("data");
    let train = table(&m, &data, 40, Split::Train, 1);
    let test = table(&m, &data, 30, Split::Test, 2);
    let config = SessionConfig {
        base_params: TreeParams::with_depth(3),
        viz_params: VizParams {
            steps: 4,
            ..VizParams::default()
        },
        options: IlluminateOptions::default(),
    };
    Session::create(&tmp.join("session"), m, train, Some(test), Some(0.9), None, config).unwrap()
}
