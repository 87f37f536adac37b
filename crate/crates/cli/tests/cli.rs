use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use natias::diffnet::checkpoint::load_checkpoint;
use natias::image::read_pgm_file;

fn natias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natias")).args(args).env_remove("NATIAS_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = natias(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm" || e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_writes_pgms_and_manifest_deterministically() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen", "--n", "12", "--size", "32", "--seed", "1", "--out", s(&a)]);
    ok(&["gen", "--n", "12", "--size", "32", "--seed", "1", "--out", s(&b)]);
    let files = dir_bytes(&a);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".pgm")).count(), 12);
    assert!(a.join("manifest.json").is_file());
    assert!(a.join("resolved.toml").is_file());
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn seed_env_is_a_fallback() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen", "--n", "2", "--size", "16", "--seed", "7", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_natias"))
        .args(["gen", "--n", "2", "--size", "16", "--out", s(&b)])
        .env("NATIAS_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn validation_errors_exit_with_one() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(natias(&["gen", "--n", "0", "--out", s(&t.path().join("x"))]).status.code(), Some(1));
    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "[attack]\nalpah = 2.0\n").unwrap();
    assert_eq!(natias(&["--config", s(&cfg), "gen", "--out", s(&t.path().join("y"))]).status.code(), Some(1));
    assert_eq!(natias(&["attack", "--method", "nope", "--model", "m", "--covers", "c", "--out", "o"]).status.code(), Some(1));
    assert_eq!(
        natias(&["attack", "--method", "adv-emb", "--model", s(&t.path().join("missing")), "--covers", s(t.path()), "--out", "o"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn train_attack_eval_attribute_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let ckpt = t.path().join("model.ckpt");
    ok(&["gen", "--n", "40", "--size", "32", "--seed", "3", "--out", s(&data)]);
    ok(&["train", "--covers", s(&data), "--epochs", "1", "--out", s(&ckpt)]);
    assert!(ckpt.is_file());
    assert!(t.path().join("model.ckpt.toml").is_file());

    let run = t.path().join("run");
    ok(&["attack", "--model", s(&ckpt), "--covers", s(&data), "--method", "natias-adv", "--payload", "0.4", "--cost", "suniward", "--limit", "3", "--out", s(&run)]);
    let lines = fs::read_to_string(run.join("outcomes.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["method"], "natias-adv");
        for key in ["cover_id", "deceived", "beta_final", "phi", "l1_change_count"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
    assert_eq!(dir_bytes(&run.join("stegos")).len(), 3);

    let outcomes = run.join("outcomes.jsonl");
    let first = ok(&["eval", "--outcomes", s(&outcomes)]).stdout;
    assert_eq!(first, ok(&["eval", "--outcomes", s(&outcomes)]).stdout);
    let report = ok(&["eval", "--model", s(&ckpt), "--covers", s(&data), "--stegos", s(&run.join("stegos"))]).stdout;
    let v: serde_json::Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(v["n_stego"], 3);

    let heat = t.path().join("heat.pgm");
    ok(&["attribute", "--model", s(&ckpt), "--image", s(&data.join("00000.pgm")), "--tap", "block3", "--M", "50", "--out", s(&heat)]);
    let shape = load_checkpoint(&ckpt).unwrap().tap_shape("block3").unwrap();
    let img = read_pgm_file(&heat).unwrap();
    assert_eq!((img.height(), img.width()), (shape[1], shape[2]));
    assert_eq!(
        natias(&["attribute", "--model", s(&ckpt), "--image", s(&data.join("00000.pgm")), "--tap", "block9", "--out", s(&heat)]).status.code(),
        Some(1)
    );
}

#[test]
fn attack_is_reproducible_and_leaves_inputs_alone() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let ckpt = t.path().join("m.ckpt");
    ok(&["gen", "--n", "30", "--size", "32", "--seed", "4", "--out", s(&data)]);
    ok(&["train", "--covers", s(&data), "--epochs", "1", "--out", s(&ckpt)]);
    let before = dir_bytes(&data);
    let (r1, r2) = (t.path().join("r1"), t.path().join("r2"));
    ok(&["--jobs", "1", "attack", "--model", s(&ckpt), "--covers", s(&data), "--method", "adv-emb", "--limit", "4", "--out", s(&r1)]);
    ok(&["--jobs", "2", "attack", "--model", s(&ckpt), "--covers", s(&data), "--method", "adv-emb", "--limit", "4", "--out", s(&r2)]);
    assert_eq!(fs::read(r1.join("outcomes.jsonl")).unwrap(), fs::read(r2.join("outcomes.jsonl")).unwrap());
    assert_eq!(dir_bytes(&r1.join("stegos")), dir_bytes(&r2.join("stegos")));
    assert_eq!(before, dir_bytes(&data));
}
