use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crowdlab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlab"))
        .env_remove("CROWDLAB_ROOT")
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = crowdlab(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(root: &Path, args: &[&str]) -> String {
    let out = crowdlab(root, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: &[&str] = &["--size", "64x64", "--levels", "0,1", "--scale", "0.05"];

fn gen(root: &Path, out: &str, seed: &str, extra: &[&str]) {
    let mut args = vec!["gen", "--locations", "2", "--seed", seed, "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(root, &args);
}

#[test]
fn gen_five_locations_gives_twenty_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["gen", "--locations", "5", "--seed", "7", "--size", "64x64", "--levels", "0", "--scale", "0.01"],
    );
    assert!(out.contains("from 20 scenes"), "{out}");
    let m = json(&dir.path().join("data/manifest.json"));
    let scenes: BTreeSet<(u64, u64)> = m
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["location_id"].as_u64().unwrap(), r["camera_id"].as_u64().unwrap()))
        .collect();
    assert_eq!(scenes.len(), 20);
}

#[test]
fn cross_location_split_shares_no_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen", "--locations", "4", "--seed", "2"];
    args.extend_from_slice(TINY);
    ok(dir.path(), &args);
    ok(dir.path(), &["split", "--strategy", "cross_location", "--seed", "3"]);
    let split = json(&dir.path().join("data/split-cross_location.json"));
    let loc = |key: &str| -> BTreeSet<String> {
        split[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|id| id.as_str().unwrap()[..4].to_string())
            .collect()
    };
    let train: BTreeSet<_> = loc("train_ids").union(&loc("val_ids")).cloned().collect();
    assert!(train.is_disjoint(&loc("test_ids")));
    assert!(!loc("test_ids").is_empty());
}

#[test]
fn filter_writes_manifest_and_rejection_log() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "data", "5", &[]);
    let out = ok(dir.path(), &["filter", "--rule", "worldexpo10"]);
    assert!(out.contains("kept"));
    let kept = json(&dir.path().join("data/manifest.filtered.json"));
    let log = json(&dir.path().join("data/manifest.filtered.rejections.json"));
    let total = json(&dir.path().join("data/manifest.json")).as_array().unwrap().len();
    assert_eq!(kept.as_array().unwrap().len() + log.as_array().unwrap().len(), total);
    for r in log.as_array().unwrap() {
        assert!(r["id"].is_string() && r["clause"].is_string());
    }
    let err = fail(dir.path(), &["filter", "--rule", "no_such_rule"]);
    assert!(err.contains("no_such_rule"));
}

#[test]
fn oracle_eval_has_zero_mae() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "data", "6", &[]);
    ok(dir.path(), &["split"]);
    let out = ok(
        dir.path(),
        &["eval", "--oracle", "--split", "data/split-random.json", "--out", "runs/oracle"],
    );
    assert!(out.contains("MAE    0.000"), "{out}");
    let r = json(&dir.path().join("runs/oracle/eval_report.json"));
    // counts come from summing the density map, so zero up to rounding
    assert!(r["mae"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["psnr"], "inf");
    assert_eq!(r["miou"], 1.0);
}

#[test]
fn bad_config_names_the_key_and_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"lr": -1}"#).unwrap();
    fs::write(dir.path().join("typo.json"), r#"{"loss_weights": {"alpha": 1, "gamma": 2}}"#).unwrap();
    gen(dir.path(), "data", "1", &[]);
    ok(dir.path(), &["split"]);
    let err = fail(dir.path(), &["train", "--config", "bad.json", "--split", "data/split-random.json"]);
    assert!(err.contains("`lr`"), "{err}");
    let err = fail(dir.path(), &["train", "--config", "typo.json", "--split", "data/split-random.json"]);
    assert!(err.contains("loss_weights.gamma"), "{err}");
    let err = fail(dir.path(), &["train", "--config", "missing.json", "--split", "data/split-random.json"]);
    assert!(err.contains("does not exist"), "{err}");
    fail(dir.path(), &["frobnicate"]);
}

#[test]
fn train_eval_adapt_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen(root, "game", "8", &["--style", "game"]);
    gen(root, "street", "9", &["--style", "street"]);
    ok(root, &["split", "--data", "game"]);
    ok(root, &["split", "--data", "street"]);
    fs::write(
        root.join("cfg.json"),
        r#"{"epochs": 2, "batch_size": 2, "lr": 0.001, "model": {"sfcn_width": 4, "ngf": 4, "n_res": 1, "ndf": 4, "dc_ndf": 4}}"#,
    )
    .unwrap();
    ok(
        root,
        &[
            "train",
            "--config",
            "cfg.json",
            "--data",
            "game",
            "--split",
            "game/split-random.json",
            "--set",
            "loss_weights.beta=0.2",
            "--run-id",
            "sup",
        ],
    );
    let echo = json(&root.join("runs/sup/config.json"));
    assert_eq!(echo["loss_weights"]["beta"], 0.2);
    assert_eq!(echo["lnf"], 100.0);
    assert!(root.join("runs/sup/records.jsonl").exists());
    assert!(root.join("runs/sup/ckpt/best.ckpt").exists());

    let out = ok(
        root,
        &[
            "eval",
            "--data",
            "game",
            "--split",
            "game/split-random.json",
            "--checkpoint",
            "runs/sup/ckpt/best.ckpt",
            "--out",
            "runs/sup/test",
        ],
    );
    assert!(out.contains("MAE"));

    ok(
        root,
        &[
            "adapt",
            "--config",
            "cfg.json",
            "--set",
            "regime=da_joint",
            "--set",
            "density_reg=true",
            "--synth",
            "game",
            "--synth-split",
            "game/split-random.json",
            "--real",
            "street",
            "--real-split",
            "street/split-random.json",
            "--run-id",
            "da",
        ],
    );
    assert!(root.join("runs/da/translate/epoch-0001-00.png").exists());
    assert!(root.join("runs/da/density_bound.json").exists());
    let run = json(&root.join("runs/da/run.json"));
    assert_eq!(run["target_label_reads"], 0);
    let err = fail(
        root,
        &[
            "adapt",
            "--config",
            "cfg.json",
            "--synth",
            "game",
            "--synth-split",
            "game/split-random.json",
            "--real",
            "street",
            "--real-split",
            "street/split-random.json",
        ],
    );
    assert!(err.contains("regime"), "{err}");

    ok(
        root,
        &[
            "eval",
            "--data",
            "street",
            "--split",
            "street/split-random.json",
            "--checkpoint",
            "runs/da/ckpt/best-sfcn.ckpt",
            "--translator",
            "runs/da/ckpt/last-g_sr.ckpt",
            "--max-s",
            "50",
            "--out",
            "runs/da/test",
        ],
    );

    ok(root, &["report"]);
    let md = fs::read_to_string(root.join("report/report.md")).unwrap();
    assert!(md.contains("| sup |") && md.contains("| da |"), "{md}");
    assert!(md.contains("sup/test"));
    assert!(root.join("report/sup-loss.png").exists());
    assert!(root.join("report/da-val_mae.png").exists());
}

#[test]
fn pretrain_finetune_writes_three_runs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen(root, "game", "8", &["--style", "game"]);
    gen(root, "street", "9", &["--style", "street"]);
    ok(root, &["split", "--data", "game"]);
    ok(root, &["split", "--data", "street"]);
    fs::write(
        root.join("cfg.json"),
        r#"{"regime": "pretrain_finetune", "epochs": 1, "lr": 0.001, "model": {"sfcn_width": 4}}"#,
    )
    .unwrap();
    ok(
        root,
        &[
            "train",
            "--config",
            "cfg.json",
            "--data",
            "street",
            "--split",
            "street/split-random.json",
            "--source-data",
            "game",
            "--source-split",
            "game/split-random.json",
            "--ft-set",
            "epochs=2",
            "--run-id",
            "pf",
        ],
    );
    for phase in ["pretrain", "finetune", "scratch"] {
        assert!(root.join("runs/pf").join(phase).join("run.json").exists());
    }
    assert_eq!(json(&root.join("runs/pf/finetune/config.json"))["epochs"], 2);
    assert_eq!(json(&root.join("runs/pf/pretrain/config.json"))["epochs"], 1);
}

#[test]
fn crowdlab_root_env_overrides_flag() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_crowdlab"))
        .env("CROWDLAB_ROOT", b.path())
        .args(["--root", a.path().to_str().unwrap(), "gen", "--locations", "1"])
        .args(TINY)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(b.path().join("data/manifest.json").exists());
    assert!(!a.path().join("data").exists());
}
