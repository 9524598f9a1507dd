use std::collections::BTreeSet;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use idt_core::bestchannel::{best_channel_map, render_best_channel_image, MosaicStyle};
use idt_core::cellcrop::{
    build_manifest, detect_cell_region, ColorDetectParams, extract_cell, extract_dataset, write_synth_images, CellImage, DatasetManifest,
    RawImage, Split,
};
use idt_core::dtree::{fit_tree, tree_accuracy, DecisionTree, TreeParams};
use idt_core::featviz::{visualize_layer_grid, GridStyle, VizCache, VizKey, VizParams};
use idt_core::illuminate::{Session, SessionConfig};
use idt_core::model::{
    build_model, evaluate, extract_feature_vectors, feature_index, parse_feature_name, train, FeatureTable,
    ModelConfig, TrainedModel,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::cli::*;
use crate::config::{load_synth_spec, PipelineConfig, VizConfig};

pub struct Ctx {
    /// Config file merged with the global flags.
    pub config: PipelineConfig,
    pub force: bool,
}

impl Ctx {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn out(&self) -> Result<PathBuf> {
        self.config.out.clone().context("--out is required")
    }
}

/// Parses a lowercase enum name through its serde representation.
pub fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| anyhow::anyhow!("unknown {what} `{s}`"))
}

/// Refuses to clobber an existing file or non-empty directory without `--force`.
pub fn guard_output(path: &Path, force: bool) -> Result<()> {
    let occupied = if path.is_dir() {
        std::fs::read_dir(path)?.next().is_some()
    } else {
        path.exists()
    };
    if occupied && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

/// Inclusive `A..B` (or `A..=B`) ranges and single channels, comma separated.
pub fn parse_channels(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().with_context(|| format!("bad channel range `{part}`"))?;
            let b: usize = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .with_context(|| format!("bad channel range `{part}`"))?;
            ensure!(a <= b, "empty channel range `{part}`");
            out.extend(a..=b);
        } else {
            out.push(part.parse().with_context(|| format!("bad channel `{part}`"))?);
        }
    }
    ensure!(!out.is_empty(), "no channels given");
    Ok(out)
}

fn parse_hue_band(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').context("hue band must be LO:HI")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

/// Drops every class not named in `keep`. An empty list keeps all.
pub fn select_classes(mut manifest: DatasetManifest, keep: &[String]) -> Result<DatasetManifest> {
    if keep.is_empty() {
        return Ok(manifest);
    }
    for k in keep {
        ensure!(
            manifest.classes.contains(k),
            "class `{k}` not in dataset (have {})",
            manifest.classes.join(", ")
        );
    }
    manifest.classes.retain(|c| keep.contains(c));
    manifest.entries.retain(|e| keep.contains(&e.class));
    ensure!(manifest.classes.len() >= 2, "need at least two classes");
    Ok(manifest)
}

/// The manifest named by `--data`, or the one stored next to a checkpoint.
pub fn resolve_manifest(ctx: &Ctx, data: &DataArgs, model_dir: Option<&Path>) -> Result<DatasetManifest> {
    let split = data.split_fraction.unwrap_or(ctx.config.data.split_fraction);
    let manifest = match (&data.data, model_dir) {
        (Some(p), _) if p.is_file() => DatasetManifest::load(p)?,
        (Some(p), _) => {
            let root = p.canonicalize().with_context(|| format!("data directory {}", p.display()))?;
            build_manifest(&root, split, ctx.seed())?
        }
        (None, Some(m)) if m.join("manifest.json").is_file() => DatasetManifest::load(&m.join("manifest.json"))?,
        (None, _) => bail!("--data is required"),
    };
    let keep = if data.classes.is_empty() {
        &ctx.config.data.classes
    } else {
        &data.classes
    };
    select_classes(manifest, keep)
}

/// `train.feats` and optional `test.feats` of a feature directory, or a
/// single table file used as the train table.
pub fn load_feats(path: &Path) -> Result<(FeatureTable, Option<FeatureTable>)> {
    if path.is_file() {
        return Ok((FeatureTable::load(path)?, None));
    }
    let train = FeatureTable::load(&path.join("train.feats"))?;
    let test_path = path.join("test.feats");
    let test = if test_path.exists() {
        Some(FeatureTable::load(&test_path)?)
    } else {
        None
    };
    Ok((train, test))
}

fn load_model(dir: &Path) -> Result<TrainedModel> {
    TrainedModel::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn viz_params(base: &VizConfig, flags: &VizFlags, seed: u64) -> VizParams {
    let mut p = base.params(seed);
    if let Some(s) = flags.steps {
        p.steps = s;
    }
    if let Some(s) = flags.step_size {
        p.step_size = s;
    }
    p
}

pub fn tree_params(ctx: &Ctx, table: &FeatureTable, excluded: &[String]) -> Result<TreeParams> {
    let t = &ctx.config.tree;
    let excluded_features = excluded
        .iter()
        .map(|n| {
            let pos = parse_feature_name(n).and_then(|p| feature_index(p, table.layer_shape));
            pos.with_context(|| format!("cannot exclude `{n}` from a {:?} layer", table.layer_shape))
        })
        .collect::<Result<BTreeSet<_>>>()?;
    Ok(TreeParams {
        max_depth: t.max_depth,
        min_samples_split: t.min_samples_split,
        min_samples_leaf: t.min_samples_leaf,
        excluded_features,
        seed: ctx.seed(),
        criterion: t.criterion,
    })
}

fn root_feature(tree: &DecisionTree) -> Option<String> {
    tree.root().feature().and_then(|f| tree.feature_name(f).ok())
}

pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let spec = match &args.spec {
        Some(p) => load_synth_spec(p)?,
        None => ctx.config.synth_spec()?,
    };
    let n = args.n.unwrap_or(ctx.config.data.synth_n);
    write_synth_images(&spec, n, &out, ctx.seed())?;
    println!(
        "wrote {} images ({} classes) to {}",
        n * spec.classes.len(),
        spec.classes.len(),
        out.display()
    );
    Ok(())
}

pub fn extract(ctx: &Ctx, args: &ExtractArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let mut cfg = ctx.config.extract.clone();
    if let Some(b) = &args.hue_band {
        cfg.hue_band = parse_hue_band(b)?;
    }
    if let Some(a) = args.min_area {
        cfg.min_area = a;
    }
    if let Some(s) = args.min_saturation {
        cfg.min_saturation = s;
    }
    if let Some(f) = &args.format {
        cfg.format = parse_enum("crop format", f)?;
    }
    let report = extract_dataset(&args.input, &out, &cfg.params(), cfg.format)?;
    for (path, why) in &report.skipped {
        log::warn!("skipped {}: {why}", path.display());
    }
    println!(
        "extracted {} crops to {}, skipped {}",
        report.extracted,
        out.display(),
        report.skipped.len()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let mut cfg = ctx.config.train.clone();
    if let Some(p) = &args.preset {
        cfg.preset = p.parse()?;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(m) = args.momentum {
        cfg.momentum = m;
    }
    let manifest = resolve_manifest(ctx, &args.data, None)?;
    let model = fit_model(&manifest, &cfg, ctx.seed())?;
    save_model(&model, &manifest, &out)?;
    let m = model.train_metrics.as_ref().expect("trained model has metrics");
    print_json(&json!({
        "epochs": m.epochs,
        "train_acc": m.final_train_acc,
        "test_acc": m.final_test_acc,
        "classes": model.class_order,
    }));
    Ok(())
}

pub fn fit_model(manifest: &DatasetManifest, cfg: &crate::config::TrainConfig, seed: u64) -> Result<TrainedModel> {
    let config = ModelConfig::from_preset(cfg.preset, seed)?;
    let model = build_model(config, manifest.classes.len())?;
    Ok(train(model, manifest, &cfg.hyper_params(seed))?)
}

pub fn save_model(model: &TrainedModel, manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    model.save(dir)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

/// Writes `train.feats` and, when the test split is non-empty, `test.feats`.
pub fn write_features(model: &TrainedModel, manifest: &DatasetManifest, layer: &str, dir: &Path) -> Result<()> {
    ensure!(
        model.class_order == manifest.classes,
        "model classes [{}] differ from dataset classes [{}]",
        model.class_order.join(", "),
        manifest.classes.join(", ")
    );
    std::fs::create_dir_all(dir)?;
    extract_feature_vectors(model, manifest, layer, Some(Split::Train))?.save(&dir.join("train.feats"))?;
    if manifest.count(Split::Test) > 0 {
        extract_feature_vectors(model, manifest, layer, Some(Split::Test))?.save(&dir.join("test.feats"))?;
    }
    Ok(())
}

pub fn features(ctx: &Ctx, args: &FeaturesArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let model = load_model(&args.model)?;
    let layer = args
        .layer
        .clone()
        .or_else(|| ctx.config.features.layer.clone())
        .unwrap_or_else(|| model.feature_layer().to_string());
    let manifest = resolve_manifest(ctx, &args.data, Some(&args.model))?;
    write_features(&model, &manifest, &layer, &out)?;
    let (h, w, c) = model.layer_shape(&layer)?;
    println!(
        "layer {layer} ({h}x{w}x{c} = {} features): {} train, {} test rows in {}",
        h * w * c,
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        out.display()
    );
    Ok(())
}

pub fn viz(ctx: &Ctx, args: &VizArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let model = load_model(&args.model)?;
    let layer = args.layer.clone().unwrap_or_else(|| model.feature_layer().to_string());
    let channels = parse_channels(&args.channels)?;
    let params = viz_params(&ctx.config.viz, &args.viz, ctx.seed());
    let cache = VizCache::on_disk(&out, params.clone())?;
    let grid = visualize_layer_grid(&model, &layer, &channels, &params, &GridStyle::default())?;
    for tile in &grid.tiles {
        println!(
            "{layer} channel {}: objective {:.4} -> {:.4}{}",
            tile.channel,
            tile.objective_initial,
            tile.objective_final,
            if tile.dead { " (dead)" } else { "" }
        );
    }
    for tile in grid.tiles {
        cache.insert(tile)?;
    }
    grid.image.save(out.join("grid.png"))?;
    println!("wrote {}", out.join("grid.png").display());
    Ok(())
}

fn load_cell(model: &TrainedModel, path: &Path) -> Result<CellImage> {
    let cfg = model.config();
    let pixels = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    if pixels.dimensions() == (cfg.input_width as u32, cfg.input_height as u32) {
        return Ok(CellImage::new(pixels, "", path)?);
    }
    let raw = RawImage::load(path, "")?;
    let bbox = detect_cell_region(&raw, &ColorDetectParams::default())?;
    Ok(extract_cell(&raw, &bbox))
}

pub fn bestchannel(ctx: &Ctx, args: &BestChannelArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let model = load_model(&args.model)?;
    let layer = args.layer.clone().unwrap_or_else(|| model.feature_layer().to_string());
    let cell = load_cell(&model, &args.image)?;
    let map = best_channel_map(&model.forward_features(&cell, &layer)?);

    let viz_dir = args.viz_dir.clone().unwrap_or_else(|| {
        out.parent()
            .map_or_else(|| PathBuf::from("viz"), |p| p.join("viz"))
    });
    let cache = VizCache::on_disk(&viz_dir, viz_params(&ctx.config.viz, &args.viz, ctx.seed()))?;
    let channels: BTreeSet<usize> = map.cells.iter().map(|&(c, _)| c).collect();
    log::info!("visualizing {} distinct channels", channels.len());
    channels
        .par_iter()
        .map(|&c| cache.get_or_compute(&model, &VizKey::channel(&layer, c)).map(|_| ()))
        .collect::<idt_core::Result<()>>()?;

    let style = MosaicStyle {
        background: args.overlay.map(|a| (cell.pixels().clone(), a)),
        ..MosaicStyle::default()
    };
    let mosaic = render_best_channel_image(&map, &cache, &style)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    mosaic.save(&out)?;
    std::fs::write(out.with_extension("json"), serde_json::to_string_pretty(&map)?)?;
    println!(
        "wrote {} ({} distinct channels)",
        out.display(),
        channels.len()
    );
    Ok(())
}

pub fn tree_fit(ctx: &Ctx, args: &TreeFitArgs) -> Result<()> {
    let out = ctx.out()?;
    guard_output(&out, ctx.force)?;
    let (train, test) = load_feats(&args.feats)?;
    let mut c = ctx.config.clone();
    if let Some(d) = args.max_depth {
        c.tree.max_depth = d;
    }
    if let Some(s) = &args.criterion {
        c.tree.criterion = s.parse()?;
    }
    if let Some(m) = args.min_samples_leaf {
        c.tree.min_samples_leaf = m;
    }
    if let Some(m) = args.min_samples_split {
        c.tree.min_samples_split = m;
    }
    let excluded = if args.exclude.is_empty() {
        &c.tree.exclude
    } else {
        &args.exclude
    };
    let ctx2 = Ctx {
        config: c.clone(),
        force: ctx.force,
    };
    let params = tree_params(&ctx2, &train, excluded)?;
    let tree = fit_tree(&train, &params)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    tree.save(&out)?;
    print_json(&json!({
        "tree": out,
        "depth": tree.depth(),
        "n_nodes": tree.nodes.len(),
        "root_feature": root_feature(&tree),
        "train_acc": tree_accuracy(&tree, &train)?,
        "test_acc": test.as_ref().map(|t| tree_accuracy(&tree, t)).transpose()?,
    }));
    Ok(())
}

pub fn tree_score(args: &TreeScoreArgs) -> Result<()> {
    let tree = DecisionTree::load(&args.tree)?;
    let (train, test) = load_feats(&args.feats)?;
    print_json(&json!({
        "depth": tree.depth(),
        "n_nodes": tree.nodes.len(),
        "root_feature": root_feature(&tree),
        "train_acc": tree_accuracy(&tree, &train)?,
        "n_train": train.n_rows(),
        "test_acc": test.as_ref().map(|t| tree_accuracy(&tree, t)).transpose()?,
        "n_test": test.as_ref().map_or(0, |t| t.n_rows()),
    }));
    Ok(())
}

/// Everything `Session::create` needs besides the output directory.
pub struct SessionInputs {
    pub model: TrainedModel,
    pub train: FeatureTable,
    pub test: Option<FeatureTable>,
    pub cnn_test_acc: Option<f64>,
    pub tree: DecisionTree,
    pub config: SessionConfig,
}

pub fn create_session(dir: &Path, inputs: SessionInputs) -> Result<Session> {
    let test = inputs.test.filter(|t| !t.is_empty());
    Ok(Session::create(
        dir,
        inputs.model,
        inputs.train,
        test,
        inputs.cnn_test_acc,
        Some(inputs.tree),
        inputs.config,
    )?)
}

pub fn illuminate(ctx: &Ctx, args: &IlluminateArgs) -> Result<()> {
    let out = ctx.out()?;
    if out.join("session.json").exists() && !ctx.force {
        bail!("{} already holds a session; pass --force to overwrite", out.display());
    }
    let model = load_model(&args.model)?;
    let tree = DecisionTree::load(&args.tree)?;
    let manifest = resolve_manifest(ctx, &args.data, Some(&args.model)).ok();
    let (train, test) = match (&args.feats, &manifest) {
        (Some(f), _) => load_feats(f)?,
        (None, Some(m)) => {
            let layer = model.feature_layer().to_string();
            let train = extract_feature_vectors(&model, m, &layer, Some(Split::Train))?;
            let test = (m.count(Split::Test) > 0)
                .then(|| extract_feature_vectors(&model, m, &layer, Some(Split::Test)))
                .transpose()?;
            (train, test)
        }
        (None, None) => bail!("pass --feats or --data"),
    };
    ensure!(
        train.layer_shape == tree.layer_shape,
        "tree was fit on a {:?} layer but the features are {:?}",
        tree.layer_shape,
        train.layer_shape
    );
    let cnn_test_acc = match &manifest {
        Some(m) if m.count(Split::Test) > 0 => Some(evaluate(&model, m, Split::Test)?),
        _ => model.train_metrics.as_ref().and_then(|m| m.final_test_acc),
    };

    let mut ill = ctx.config.illuminate.clone();
    if let Some(o) = &args.objective {
        ill.objective = parse_enum("objective", o)?;
    }
    if let Some(k) = args.examples_per_leaf {
        ill.examples_per_leaf = k;
    }
    let config = SessionConfig {
        base_params: tree_params(ctx, &train, &ctx.config.tree.exclude)?,
        viz_params: viz_params(&ctx.config.viz, &args.viz, ctx.seed()),
        options: ill.options(),
    };
    let session = create_session(
        &out,
        SessionInputs {
            model,
            train,
            test,
            cnn_test_acc,
            tree,
            config,
        },
    )?;
    let latest = session.latest();
    print_json(&json!({
        "session": out,
        "root_feature": root_feature(&latest.itree.tree),
        "metrics": latest.itree.metrics,
    }));
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", args.host, args.port))?;
    ensure!(
        args.session.join("session.json").is_file(),
        "{} is not a session directory",
        args.session.display()
    );
    let options = idt_explorer::ServerOptions {
        on_demand_viz: !args.no_on_demand_viz,
        static_dir: args.static_dir.clone(),
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        idt_explorer::serve_on(listener, args.session.clone(), options).await?;
        Ok(())
    })
}
