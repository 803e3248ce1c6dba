use std::path::Path;
use std::process::{Command, Output};

use idblend::eval::textures::texture;
use idblend::ImageBuffer;

fn idblend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idblend")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = idblend(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = idblend(&["sample", "--bundel", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(idblend(&["--version"]).status.success());
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = idblend(&["bench-memory", "--set", "learning_rate=3", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    let out = idblend(&["--device", "cuda", "reconstruct", "--bundle", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_generate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for k in 0..2 {
        texture(k, (24, 24), k as u64).save_png(root.join(format!("t{k}.png"))).unwrap();
    }
    let cfg = root.join("train.cfg");
    std::fs::write(&cfg, "iterations = 3\nd_steps = 1\ng_steps = 1\nchannel_base = 4\nmin_dim = 16\n").unwrap();
    let bundle = root.join("bundle");
    ok(&[
        "train",
        "--images",
        p(&root.join("t0.png")),
        p(&root.join("t1.png")),
        "--config",
        p(&cfg),
        "--set",
        "max_dim=24",
        "--seed",
        "9",
        "--quiet",
        "--out-dir",
        p(&bundle),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 9);
    assert_eq!(manifest["config"]["max_dim"], 24);
    assert_eq!(manifest["images"].as_array().unwrap().len(), 2);

    let out = root.join("out");
    let b = p(&bundle);
    let o = p(&out);
    let s = ok(&["morph", "--bundle", b, "--weights", "0.2,0.4,0.6,0.8", "--out-dir", o]);
    assert_eq!(s.lines().count(), 4);
    for i in 0..4 {
        assert_eq!(ImageBuffer::load(out.join(format!("morph_{i:03}.png"))).unwrap().size(), (24, 24));
    }
    ok(&["reconstruct", "--bundle", b, "--out-dir", o]);
    assert!(out.join("reconstruct_id1.png").is_file());
    ok(&["sample", "--bundle", b, "--weights", "0.5,0.5", "--size", "20x30", "--n", "2", "--out-dir", o]);
    assert_eq!(ImageBuffer::load(out.join("sample_001.png")).unwrap().size(), (20, 30));
    ok(&["meld", "--bundle", b, "--out-width", "60", "--out-dir", o]);
    assert_eq!(ImageBuffer::load(out.join("meld.png")).unwrap().size(), (24, 60));
    ok(&["fuse", "--bundle", b, "--structure", "0", "--texture", "1", "--transition", "1", "--out-dir", o]);
    ok(&["edit", "--bundle", b, "--image", p(&out.join("reconstruct_id0.png")), "--out-dir", o]);
    ok(&["eval", "--bundle", b, "--n", "3", "--out-dir", o]);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("samples,diversity_mean"));

    let a = std::fs::read(out.join("sample_000.png")).unwrap();
    ok(&["sample", "--bundle", b, "--weights", "0.5,0.5", "--size", "20x30", "--out-dir", o]);
    assert_eq!(a, std::fs::read(out.join("sample_000.png")).unwrap());

    let err = idblend(&["sample", "--bundle", b, "--id", "7", "--out-dir", o]);
    assert_eq!(err.status.code(), Some(1));
}
