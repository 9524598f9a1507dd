use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn idt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idt")).args(args).output().expect("spawn idt")
}

fn ok(args: &[&str]) -> String {
    let out = idt(args);
    assert!(
        out.status.success(),
        "idt {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = idt(args);
    assert!(!out.status.success(), "idt {} unexpectedly succeeded", args.join(" "));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_of(stdout: &str) -> Value {
    let start = stdout.find('{').expect("json on stdout");
    serde_json::from_str(&stdout[start..]).unwrap()
}

/// Crops, a one-epoch model and its features, shared by the tests below.
struct Fixture {
    _tmp: tempfile::TempDir,
    crops: PathBuf,
    model: PathBuf,
    feats: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        let crops = tmp.path().join("crops");
        let model = tmp.path().join("model");
        let feats = tmp.path().join("feats");
        ok(&["synth", "--n", "10", "--seed", "3", "--out", s(&raw)]);
        ok(&["extract", "--in", s(&raw), "--out", s(&crops)]);
        ok(&["train", "--data", s(&crops), "--epochs", "1", "--out", s(&model)]);
        ok(&["features", "--model", s(&model), "--out", s(&feats)]);
        Fixture {
            _tmp: tmp,
            crops,
            model,
            feats,
        }
    })
}

#[test]
fn subcommands_chain_from_images_to_session() {
    let f = fixture();
    assert!(f.crops.join("pinkblob").is_dir() && f.crops.join("blueblob").is_dir());
    assert!(f.model.join("manifest.json").is_file());
    assert!(f.feats.join("train.feats").is_file());

    let tmp = tempfile::tempdir().unwrap();
    let tree = tmp.path().join("tree.json");
    let fit = json_of(&ok(&["tree", "fit", "--feats", s(&f.feats), "--max-depth", "2", "--out", s(&tree)]));
    assert!(fit["depth"].as_u64().unwrap() <= 2);
    let score = json_of(&ok(&["tree", "score", "--tree", s(&tree), "--feats", s(&f.feats)]));
    assert_eq!(score["train_acc"], fit["train_acc"]);
    assert_eq!(score["n_train"].as_u64().unwrap() + score["n_test"].as_u64().unwrap(), 20);

    let viz = tmp.path().join("viz");
    ok(&["viz", "--model", s(&f.model), "--channels", "0..2", "--steps", "3", "--out", s(&viz)]);
    let grid = image::open(viz.join("grid.png")).unwrap();
    assert!(grid.width() > 0);

    let image = std::fs::read_dir(f.crops.join("pinkblob")).unwrap().next().unwrap().unwrap().path();
    let mosaic = tmp.path().join("best.png");
    ok(&[
        "bestchannel", "--model", s(&f.model), "--image", s(&image), "--steps", "3", "--out", s(&mosaic),
    ]);
    assert!(mosaic.is_file() && mosaic.with_extension("json").is_file());

    let session = tmp.path().join("session");
    let ill = json_of(&ok(&[
        "illuminate", "--tree", s(&tree), "--model", s(&f.model), "--feats", s(&f.feats), "--steps", "3",
        "--out", s(&session),
    ]));
    assert_eq!(ill["root_feature"], fit["root_feature"]);
    for file in ["itree.json", "tree.json", "tree.svg", "session.json"] {
        assert!(session.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let tree = tmp.path().join("tree.json");
    let fit = ["tree", "fit", "--feats", s(&f.feats), "--max-depth", "1", "--out", s(&tree)];
    ok(&fit);
    let err = fails(&fit);
    assert!(err.contains("--force"), "{err}");
    let mut forced = fit.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn unknown_excluded_feature_is_an_error() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t.json");
    let err = fails(&["tree", "fit", "--feats", s(&f.feats), "--exclude", "99_0_0", "--out", s(&out)]);
    assert!(err.contains("99_0_0"), "{err}");
    let err = fails(&["tree", "fit", "--feats", s(&f.feats), "--exclude", "nonsense", "--out", s(&out)]);
    assert!(err.contains("nonsense"), "{err}");
    assert!(!out.exists());
}

#[test]
fn exclusion_removes_feature_from_cli_tree() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    let root = json_of(&ok(&["tree", "fit", "--feats", s(&f.feats), "--out", s(&a)]))["root_feature"]
        .as_str()
        .unwrap()
        .to_string();
    ok(&["tree", "fit", "--feats", s(&f.feats), "--exclude", &root, "--out", s(&b)]);
    let tree: Value = serde_json::from_str(&std::fs::read_to_string(&b).unwrap()).unwrap();
    assert!(tree["nodes"].as_array().unwrap().iter().all(|n| n["feature"] != root.as_str()));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(idt(&["tree", "fit"]).status.code(), Some(2));
    assert_eq!(idt(&["bogus"]).status.code(), Some(2));
    assert_eq!(idt(&["synth"]).status.code(), Some(1));
}

const RUN_CONFIG: &str = r#"
seed = 5
[data]
source = "synth"
synth_n = 10
[train]
epochs = 1
[viz]
steps = 3
[tree]
max_depth = 2
"#;

fn stage_lines(stdout: &str) -> Vec<String> {
    stdout.lines().filter(|l| l.starts_with("stage ")).map(str::to_string).collect()
}

fn ran(lines: &[String]) -> Vec<String> {
    lines
        .iter()
        .filter(|l| l.contains("done in"))
        .map(|l| l.split(':').next().unwrap().trim_start_matches("stage ").to_string())
        .collect()
}

#[test]
fn run_reuses_up_to_date_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    let out = tmp.path().join("out");
    std::fs::write(&config, RUN_CONFIG).unwrap();
    let args = ["run", "--config", s(&config), "--out", s(&out)];

    let first = ok(&args);
    assert_eq!(ran(&stage_lines(&first)), ["raw", "crops", "model", "features", "tree", "session"]);
    let metrics = std::fs::read(out.join("metrics.json")).unwrap();
    let itree = std::fs::read(out.join("session/itree.json")).unwrap();

    let second = ok(&args);
    let lines = stage_lines(&second);
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l.ends_with("up to date")), "{lines:?}");
    assert_eq!(std::fs::read(out.join("metrics.json")).unwrap(), metrics);
    assert_eq!(std::fs::read(out.join("session/itree.json")).unwrap(), itree);
    assert!(!out.join(".idt.lock").exists());

    std::fs::write(&config, RUN_CONFIG.replace("max_depth = 2", "max_depth = 1")).unwrap();
    let third = ok(&args);
    assert_eq!(ran(&stage_lines(&third)), ["tree", "session"]);
    let m: Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["max_depth"], 1);
    assert!(std::fs::read_to_string(out.join("config.resolved.toml")).unwrap().contains("max_depth = 1"));

    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(ran(&stage_lines(&ok(&forced))).len(), 6);
}

#[test]
fn failing_stage_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    let out = tmp.path().join("out");
    std::fs::write(&config, format!("{RUN_CONFIG}[features]\nlayer = \"9Z\"\n")).unwrap();
    let err = fails(&["run", "--config", s(&config), "--out", s(&out)]);
    assert!(err.contains("stage `features` failed"), "{err}");
    assert!(err.contains("9Z"), "{err}");
    assert!(!out.join("features/.stage-key").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, "[tree]\nmax_dept = 3\n").unwrap();
    let err = fails(&["run", "--config", s(&config), "--out", s(&tmp.path().join("o"))]);
    assert!(err.contains("max_dept"), "{err}");
}

#[test]
fn locked_output_blocks_a_second_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    let out = tmp.path().join("out");
    std::fs::write(&config, RUN_CONFIG).unwrap();
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".idt.lock"), "1\n").unwrap();
    let err = fails(&["run", "--config", s(&config), "--out", s(&out)]);
    assert!(err.contains("locked"), "{err}");
    assert!(!out.join("raw").exists());
}
