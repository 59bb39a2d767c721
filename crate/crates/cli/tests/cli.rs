use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
n_views = 3
lr_width = 8
lr_layers = 2
lr_samples = 8
lr_iterations = 2
lr_rays_per_step = 32
hr_width = 8
hr_layers = 2
hr_samples = 8
sr_channels = 4
sr_blocks = 1
sr_steps = 2
sr_crop = 8
sr_corpus_size = 2
sr_corpus_image_size = 16
iterations = 3
rays_per_step = 16
checkpoint_every = 2
"#;

fn supernerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supernerf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = supernerf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--config", s(&cfg), "--scale", "2", "--seed", "0", "--out", s(dir)]);
    }
    for sub in ["train", "held_out"] {
        let (fa, fb) = (files(&a.join(sub)), files(&b.join(sub)));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{sub} differs between runs");
    }
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(b.join("config.toml")).unwrap());
    let m = manifest(&a);
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let cfg = s(&cfg);
    let p = |name: &str| root.join(name);
    let (all_hr, run, eval) = (p("all_hr"), p("run"), p("eval"));

    ok(&["gen-data", "--config", cfg, "--scale", "2", "--out", s(&p("data"))]);
    let train_data = p("data").join("train");
    ok(&["pretrain-lr", "--config", cfg, "--scale", "2", "--data", s(&train_data), "--out", s(&p("lr"))]);
    ok(&["pretrain-sr", "--config", cfg, "--scale", "2", "--out", s(&p("sr"))]);
    let lr_field = p("lr").join("lr_field.snrf");
    let backbone = p("sr").join("backbone.snrf");
    let stages = [
        "--data",
        s(&train_data),
        "--lr-field",
        s(&lr_field),
        "--backbone",
        s(&backbone),
    ];

    let mut args = vec!["train", "--config", cfg, "--scale", "2", "--out", s(&all_hr), "--hybrid-hr-fraction", "1.0"];
    args.extend(stages);
    ok(&args);
    let m = manifest(&p("all_hr"));
    assert_eq!(m["details"]["latent_codes"], 0);
    assert_eq!(m["details"]["hr_views"], 3);

    let mut args = vec!["train", "--config", cfg, "--scale", "2", "--out", s(&run)];
    args.extend(stages);
    ok(&args);
    let m = manifest(&p("run"));
    assert_eq!(m["details"]["latent_codes"], 3);
    assert_eq!(m["details"]["steps"], 3);
    assert!(p("run").join("checkpoints").join("latest.snrf").exists());
    assert_eq!(files(&p("run").join("super_resolved")).len(), 3);

    let checkpoint = p("run").join("final.snrf");
    let mut args = vec!["eval", "--config", cfg, "--scale", "2", "--out", s(&eval), "--checkpoint", s(&checkpoint)];
    args.extend(stages);
    ok(&args);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(p("eval").join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["psnr"].is_number(), "held-out PSNR is picked up from the sibling directory");
    assert!(metrics["baseline_consistency"].is_object());

    ok(&[
        "render",
        "--config",
        cfg,
        "--scale",
        "2",
        "--out",
        s(&p("frames")),
        "--checkpoint",
        s(&checkpoint),
        "--data",
        s(&train_data),
        "--frames",
        "2",
    ]);
    assert_eq!(files(&p("frames").join("frames")).len(), 2);
}

fn assert_usage_error(out: &Output) {
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error") || stderr.contains("Usage"), "{stderr}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());

    assert_usage_error(&supernerf(&[]));
    assert_usage_error(&supernerf(&["train", "--out", out]));
    assert_usage_error(&supernerf(&["train", "--out", out, "--data", "x", "--lr-field", "y", "--backbone", "z", "--latent-downsample", "3"]));

    let missing = supernerf(&["pretrain-lr", "--out", out, "--data", s(&tmp.path().join("nowhere"))]);
    assert_usage_error(&missing);
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "scale = 0\n").unwrap();
    assert_usage_error(&supernerf(&["gen-data", "--config", s(&bad), "--out", out]));
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_usage_error(&supernerf(&["gen-data", "--config", s(&bad), "--out", out]));
    assert_usage_error(&supernerf(&["gen-data", "--config", s(&tmp.path().join("absent.toml")), "--out", out]));
}
