use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_vlseg3d");

const TINY: &str = r#"{
  "synth": {"train_scenes": 2, "test_scenes": 1, "points": 1200, "width": 40, "height": 40, "focal": 30.0},
  "adapter": {"epochs": 6},
  "distill": {"lr": 0.01, "iters": 6, "batch": 2, "encoder": {"pre_widths": [16], "post_widths": [16], "k": 8}},
  "ablation_seeds": [1, 2]
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(dir.join("config.json"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let footer: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    for a in footer["artifacts"].as_array().unwrap() {
        assert!(Path::new(a.as_str().unwrap()).exists(), "{a}");
    }
    footer
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), TINY).unwrap();
    dir
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn full_stage_chain() {
    let dir = setup();
    let d = dir.path();
    let out = d.join("out");

    assert_eq!(run(d, &["fuse"]).status.code(), Some(3));
    ok(d, &["synth-gen"]);
    assert_eq!(run(d, &["pseudo"]).status.code(), Some(3));
    ok(d, &["fuse"]);
    assert_eq!(run(d, &["train-adapter"]).status.code(), Some(3));
    ok(d, &["pseudo"]);
    assert_eq!(run(d, &["train-3d", "--mode", "d"]).status.code(), Some(3));
    let footer = ok(d, &["train-3d", "--mode", "a"]);
    assert_eq!(footer["command"], "train-3d");
    ok(d, &["train-adapter"]);

    let adapter_before = snapshot(&out.join("adapter"));
    ok(d, &["train-3d", "--mode", "soft_guidance_adapter"]);
    assert_eq!(snapshot(&out.join("adapter")), adapter_before, "train-3d modified the adapter");

    assert_eq!(run(d, &["infer", "--mode", "c"]).status.code(), Some(3));
    ok(d, &["infer", "--mode", "d"]);
    ok(d, &["eval", "--mode", "d"]);
    let metrics: Value = serde_json::from_slice(&std::fs::read(out.join("eval_soft_guidance_adapter.json")).unwrap()).unwrap();
    let miou = metrics["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("run_eval.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["artifacts"], serde_json::json!(["eval_soft_guidance_adapter.json"]));
    let text = String::from_utf8(std::fs::read(out.join("run_eval.json")).unwrap()).unwrap();
    assert!(!text.contains(d.to_str().unwrap()), "manifest leaks the output location");
}

#[test]
fn exit_codes_for_bad_configuration() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(run(d, &["--adapter.alpha", "1.5", "gradcheck"]).status.code(), Some(2));
    assert_eq!(run(d, &["--adapter.nonexistent", "1", "gradcheck"]).status.code(), Some(2));
    assert_eq!(run(d, &["--distill.mode", "z", "gradcheck"]).status.code(), Some(2));
    assert_eq!(run(d, &["no-such-command"]).status.code(), Some(2));
    let missing = Command::new(BIN).args(["--config", "/nonexistent.json", "gradcheck"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(d.join("config.json"), r#"{"adapter": {"alpah": 0.1}}"#).unwrap();
    assert_eq!(run(d, &["gradcheck"]).status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let dir = setup();
    let footer = ok(dir.path(), &["gradcheck"]);
    let report: Value = serde_json::from_slice(&std::fs::read(footer["artifacts"][0].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 8);
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["synth-gen"]);
    let first: Value = serde_json::from_slice(&std::fs::read(d.join("out/run_synth_gen.json")).unwrap()).unwrap();
    ok(d, &["--adapter.alpha", "0.3", "synth-gen"]);
    let second: Value = serde_json::from_slice(&std::fs::read(d.join("out/run_synth_gen.json")).unwrap()).unwrap();
    assert_ne!(first["config_hash"], second["config_hash"]);
    assert_eq!(second["config"]["adapter"]["alpha"], 0.3);
}

#[test]
fn repeated_ablations_are_byte_identical() {
    let a = setup();
    let b = setup();
    ok(a.path(), &["ablate", "--workers", "1"]);
    ok(b.path(), &["ablate", "--workers", "1"]);
    let (sa, sb) = (snapshot(&a.path().join("out")), snapshot(&b.path().join("out")));
    assert!(sa.keys().any(|k| k.ends_with("encoder_soft_guidance_adapter/encoder.json")));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs", k.display());
    }
}
