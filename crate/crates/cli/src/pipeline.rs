//! `idt run`: every stage from raw images to an explorer session, each in
//! its own subdirectory of the output and skipped when its key is unchanged.
//!
//! ```text
//! raw/        synthetic images (synth source only)
//! crops/      100×100 cell crops
//! model/      checkpoint + manifest.json
//! features/   train.feats test.feats
//! tree/       tree.json
//! session/    illuminated session (itree.json, tree.svg, viz/, ...)
//! metrics.json config.resolved.toml
//! ```

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use idt_core::cellcrop::{build_manifest, extract_dataset, write_synth_images, DatasetManifest, Split};
use idt_core::dtree::{fit_tree, DecisionTree};
use idt_core::illuminate::SessionConfig;
use idt_core::model::{evaluate, TrainedModel};
use serde_json::json;

use crate::commands::{
    create_session, fit_model, load_feats, save_model, select_classes, tree_params, write_features, Ctx,
    SessionInputs,
};
use crate::config::DataSource;
use crate::stage::{run_stage, stage_key, tree_digest, write_if_changed, DirLock};

pub fn run(ctx: &Ctx) -> Result<()> {
    let out = ctx.out()?;
    let _lock = DirLock::acquire(&out)?;
    let out = out.canonicalize()?;
    let cfg = &ctx.config;
    let seed = cfg.seed;
    write_if_changed(&out.join("config.resolved.toml"), cfg.to_toml()?.as_bytes())?;

    let (raw_dir, raw_key): (PathBuf, String) = match cfg.data.source {
        DataSource::Synth => {
            let spec = cfg.synth_spec()?;
            let n = cfg.data.synth_n;
            let key = stage_key("raw", &(&spec, n, seed), &[])?;
            run_stage(&out, "raw", &key, ctx.force, |d| Ok(write_synth_images(&spec, n, d, seed)?))?;
            (out.join("raw"), key)
        }
        DataSource::Dir => {
            let dir = cfg
                .data
                .dir
                .clone()
                .context("stage `data` failed: data.dir is required when data.source = \"dir\"")?;
            let key = tree_digest(&dir).context("stage `data` failed")?;
            (dir, key)
        }
    };

    let crops_key = stage_key("crops", &cfg.extract, &[&raw_key])?;
    run_stage(&out, "crops", &crops_key, ctx.force, |d| {
        let report = extract_dataset(&raw_dir, d, &cfg.extract.params(), cfg.extract.format)?;
        for (p, why) in &report.skipped {
            log::warn!("skipped {}: {why}", p.display());
        }
        ensure!(report.extracted > 0, "no cell detected in any image");
        Ok(())
    })?;

    let data_section = (&cfg.train, seed, cfg.data.split_fraction, &cfg.data.classes);
    let model_key = stage_key("model", &data_section, &[&crops_key])?;
    run_stage(&out, "model", &model_key, ctx.force, |d| {
        let manifest = build_manifest(&out.join("crops"), cfg.data.split_fraction, seed)?;
        let manifest = select_classes(manifest, &cfg.data.classes)?;
        let model = fit_model(&manifest, &cfg.train, seed)?;
        save_model(&model, &manifest, d)
    })?;

    let features_key = stage_key("features", &cfg.features, &[&model_key])?;
    run_stage(&out, "features", &features_key, ctx.force, |d| {
        let (model, manifest) = load_model_dir(&out.join("model"))?;
        let layer = cfg
            .features
            .layer
            .clone()
            .unwrap_or_else(|| model.feature_layer().to_string());
        write_features(&model, &manifest, &layer, d)
    })?;

    let tree_key = stage_key("tree", &(&cfg.tree, seed), &[&features_key])?;
    run_stage(&out, "tree", &tree_key, ctx.force, |d| {
        let (train, _) = load_feats(&out.join("features"))?;
        let tree = fit_tree(&train, &tree_params(ctx, &train, &cfg.tree.exclude)?)?;
        Ok(tree.save(&d.join("tree.json"))?)
    })?;

    let session_key = stage_key(
        "session",
        &(&cfg.viz, &cfg.illuminate, seed),
        &[&tree_key, &features_key, &model_key],
    )?;
    run_stage(&out, "session", &session_key, ctx.force, |d| {
        let (model, manifest) = load_model_dir(&out.join("model"))?;
        let (train, test) = load_feats(&out.join("features"))?;
        let tree = DecisionTree::load(&out.join("tree/tree.json"))?;
        let cnn_train_acc = evaluate(&model, &manifest, Split::Train)?;
        let cnn_test_acc = if manifest.count(Split::Test) > 0 {
            Some(evaluate(&model, &manifest, Split::Test)?)
        } else {
            None
        };
        let layer = train.layer_name.clone();
        let config = SessionConfig {
            base_params: tree_params(ctx, &train, &cfg.tree.exclude)?,
            viz_params: cfg.viz.params(seed),
            options: cfg.illuminate.options(),
        };
        let session = create_session(
            d,
            SessionInputs {
                model,
                train,
                test,
                cnn_test_acc,
                tree,
                config,
            },
        )?;
        let entry = session.latest();
        let it = &entry.itree;
        let root = it.tree.root().feature().map(|f| it.tree.feature_name(f)).transpose()?;
        let metrics = json!({
            "layer": layer,
            "max_depth": entry.max_depth,
            "root_feature": root,
            "excluded": it.excluded,
            "cnn_train_acc": cnn_train_acc,
            "cnn_test_acc": cnn_test_acc,
            "tree_train_acc": it.metrics.tree_train_acc,
            "tree_test_acc": it.metrics.tree_test_acc,
            "n_train": it.metrics.n_train,
            "n_test": it.metrics.n_test,
        });
        std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
        Ok(())
    })?;

    let metrics = std::fs::read_to_string(out.join("metrics.json")).context("reading metrics.json")?;
    println!("{metrics}");
    Ok(())
}

fn load_model_dir(dir: &Path) -> Result<(TrainedModel, DatasetManifest)> {
    let model = TrainedModel::load(dir)?;
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
    Ok((model, manifest))
}
