use std::sync::OnceLock;

use idt_core::cellcrop::{build_manifest, extract_dataset, synth_dataset, ColorDetectParams, CropFormat, DatasetManifest, Split, SynthSpec};
use idt_core::featviz::{visualize_feature, VizParams, VizTarget};
use idt_core::model::{build_model, evaluate, train, BlockSpec, HyperParams, ModelConfig, Preset, TrainedModel};
use proptest::prelude::*;

struct Data {
    _tmp: tempfile::TempDir,
    manifest: DatasetManifest,
}

fn data() -> &'static Data {
    static D: OnceLock<Data> = OnceLock::new();
    D.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        synth_dataset(&SynthSpec::default(), 16, &tmp.path().join("raw"), 11).unwrap();
        let report = extract_dataset(
            &tmp.path().join("raw"),
            &tmp.path().join("crops"),
            &ColorDetectParams::default(),
            CropFormat::Png,
        )
        .unwrap();
        assert_eq!(report.extracted, 32);
        let manifest = build_manifest(&tmp.path().join("crops"), 0.75, 11).unwrap();
        Data { _tmp: tmp, manifest }
    })
}

fn hp() -> HyperParams {
    HyperParams {
        epochs: 4,
        batch_size: 8,
        seed: 3,
        ..HyperParams::default()
    }
}

fn fresh() -> TrainedModel {
    build_model(ModelConfig::cnn4(3), 2).unwrap()
}

#[test]
fn training_is_reproducible() {
    let m = &data().manifest;
    let a = train(fresh(), m, &hp()).unwrap();
    let b = train(fresh(), m, &hp()).unwrap();
    assert_eq!(a, b);
    let other = train(fresh(), m, &HyperParams { seed: 4, ..hp() }).unwrap();
    assert_ne!(a.network, other.network);
}

#[test]
fn training_does_not_lower_train_accuracy() {
    let m = &data().manifest;
    let before = evaluate(&fresh(), m, Split::Train).unwrap();
    let model = train(fresh(), m, &hp()).unwrap();
    let after = evaluate(&model, m, Split::Train).unwrap();
    assert!(after >= before, "{before} -> {after}");
    assert_eq!(model.train_metrics.as_ref().unwrap().final_train_acc, after);
}

#[test]
fn forward_is_pure_and_logits_match_classes() {
    let m = &data().manifest;
    let model = train(fresh(), m, &HyperParams { epochs: 1, ..hp() }).unwrap();
    for (img, _) in m.load_split(Split::Test).unwrap() {
        let a = model.forward_features(&img, "4M").unwrap();
        let b = model.forward_features(&img, "4M").unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(model.logits(&img).unwrap().len(), model.class_order.len());
    }
}

fn tiny() -> TrainedModel {
    let cfg = ModelConfig {
        preset: Preset::Custom,
        input_height: 12,
        input_width: 12,
        input_channels: 3,
        blocks: vec![BlockSpec::new("a", 4, 3, 1, true), BlockSpec::new("b", 5, 3, 0, false)],
        feature_layer: "b".into(),
        seed: 9,
    };
    build_model(cfg, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn visualizations_stay_in_range_and_repeat(
        steps in 1usize..24,
        step_size in 1e-4f64..2.0,
        jitter in 0usize..4,
        tv in 0.0f64..1.0,
        l2 in 0.0f64..1.0,
        channel in 0usize..5,
        seed in any::<u64>(),
    ) {
        let model = tiny();
        let params = VizParams { steps, step_size, seed, jitter_pixels: jitter, tv_weight: tv, l2_weight: l2, dead_threshold: 1e-4 };
        let target = VizTarget::channel("b", channel);
        let a = visualize_feature(&model, &target, &params).unwrap();
        prop_assert!(a.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
        prop_assert!(a.objective_final.is_finite());
        let b = visualize_feature(&model, &target, &params).unwrap();
        prop_assert_eq!(a, b);
    }
}
