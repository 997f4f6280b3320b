use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
  "sim": { "n_ue": 2, "buffer_capacity": 3, "episode_len": 6, "history_len": 2 },
  "train": { "hidden": [8, 8], "batch_size": 16, "update_interval": 6, "replay_capacity": 500 },
  "train_episodes": 20,
  "eval_episodes": 5,
  "test_episodes": 10,
  "repetitions": 2,
  "eval_period": 10,
  "tune_grid": [0.0, 0.5, 1.0],
  "tune_episodes": 5
}"#;

fn emac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("plan.json");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("a metrics line")).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn manifest_hash(dir: &Path) -> String {
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["manifest_hash"].as_str().unwrap().to_string()
}

fn train_into(tmp: &TempDir, name: &str) -> PathBuf {
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join(name);
    let o = emac(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_writes_all_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = train_into(&tmp, "run");
    for f in [
        "config.json",
        "curve.csv",
        "curve_summary.csv",
        "rep_0.ckpt",
        "rep_1.ckpt",
        "best.ckpt",
        "results.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join(".emac.lock").exists());
    let hash = manifest_hash(&out);
    // 2 repetitions x checkpoints at 10 and 20 episodes
    let curve = csv_rows(&out.join("curve.csv"));
    assert_eq!(curve.len(), 4);
    assert!(curve
        .iter()
        .all(|r| r.get(r.len() - 1) == Some(hash.as_str())));
    let results = csv_rows(&out.join("results.csv"));
    assert_eq!(results.len(), 1);
    assert_eq!(&results[0][0], "maddpg");
    assert_eq!(&results[0][7], hash.as_str());
}

#[test]
fn repetition_override_sets_checkpoint_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = emac(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--repetitions",
        "3",
        "--episodes",
        "10",
        "--selector",
        "last_checkpoint",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpts = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ckpt")
        })
        .count();
    assert_eq!(ckpts, 4);
}

#[test]
fn missing_or_bad_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let missing = tmp.path().join("absent.json");
    assert_eq!(
        emac(&["train", "--config", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    assert_eq!(
        emac(&["train", "--config", s(&broken), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );

    let invalid = tmp.path().join("invalid.json");
    fs::write(&invalid, r#"{"sim": {"tbler": 1.5}}"#).unwrap();
    assert_eq!(
        emac(&["train", "--config", s(&invalid), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"sim": {"n_ues": 2}}"#).unwrap();
    let o = emac(&["tune-pt", "--config", s(&unknown)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_ues"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(emac(&["train"]).status.code(), Some(2));
    assert_eq!(
        emac(&["sweep", "--kind", "diagonal", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        emac(&["evaluate", "--method", "maddpg"]).status.code(),
        Some(2)
    );
    assert_eq!(
        emac(&["evaluate", "--method", "contention_free", "--trace"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let file = tmp.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = emac(&["train", "--config", s(&cfg), "--out", s(&file.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn locked_output_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".emac.lock"), "1").unwrap();
    let o = emac(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.join("curve.csv").exists());
    assert!(out.join(".emac.lock").exists());
}

#[test]
fn baseline_evaluation_needs_no_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = emac(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--method",
        "contention_free",
        "--episodes",
        "100",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    assert_eq!(m["method"], "contention_free");
    assert_eq!(m["episodes"], 100);
    assert_eq!(m["collision_mean"], 0.0);

    let o = emac(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--method",
        "contention_based",
        "--p-t",
        "0.5",
        "--episodes",
        "20",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["episodes"], 20);
}

#[test]
fn checkpoint_evaluation_round_trip() {
    let tmp = TempDir::new().unwrap();
    let run = train_into(&tmp, "run");
    let eval_dir = tmp.path().join("eval");
    let o = emac(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--episodes",
        "7",
        "--out",
        s(&eval_dir),
        "--trace",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    assert_eq!(m["episodes"], 7);
    // the greedy test of the survivor equals the training run's own test at 10 episodes
    let tested = emac(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--episodes",
        "10",
    ]);
    let train_row = &csv_rows(&run.join("results.csv"))[0];
    let g: f64 = train_row[3].parse().unwrap();
    assert_eq!(stdout_json(&tested)["goodput_mean"].as_f64().unwrap(), g);

    let trace = fs::read_to_string(eval_dir.join("trace.jsonl")).unwrap();
    // 7 episodes of 6 TTIs
    assert_eq!(trace.lines().count(), 42);
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["episode"], 0);
    assert_eq!(first["tti"], 0);
    assert!(eval_dir.join("results.csv").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["params_hash"].is_string());
}

#[test]
fn damaged_checkpoints_exit_4() {
    let tmp = TempDir::new().unwrap();
    let run = train_into(&tmp, "run");
    let bytes = fs::read(run.join("best.ckpt")).unwrap();

    let truncated = tmp.path().join("truncated.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
    assert_eq!(
        emac(&["evaluate", "--checkpoint", s(&truncated)])
            .status
            .code(),
        Some(4)
    );

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    let flipped_path = tmp.path().join("flipped.ckpt");
    fs::write(&flipped_path, &flipped).unwrap();
    assert_eq!(
        emac(&["evaluate", "--checkpoint", s(&flipped_path)])
            .status
            .code(),
        Some(4)
    );

    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text
        .find("\"format_version\":1")
        .expect("version field in header");
    let mut versioned = bytes.clone();
    versioned[at + "\"format_version\":".len()] = b'7';
    let versioned_path = tmp.path().join("future.ckpt");
    fs::write(&versioned_path, &versioned).unwrap();
    let o = emac(&["evaluate", "--checkpoint", s(&versioned_path)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));

    let absent = tmp.path().join("absent.ckpt");
    assert_eq!(
        emac(&["evaluate", "--checkpoint", s(&absent)])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn checkpoint_for_another_cell_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let run = train_into(&tmp, "run");
    let other = tmp.path().join("other.json");
    fs::write(
        &other,
        r#"{"sim": {"n_ue": 3, "buffer_capacity": 3, "episode_len": 6, "history_len": 2}}"#,
    )
    .unwrap();
    let o = emac(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--config",
        s(&other),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn arrival_sweep_rows_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = emac(&[
            "sweep",
            "--kind",
            "arrival",
            "--config",
            s(&cfg),
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = csv_rows(&a.join("results.csv"));
    assert_eq!(rows.len(), 6 * 3);
    for r in &rows {
        let p: f64 = r[2].parse().unwrap();
        let n: f64 = r[1].parse().unwrap();
        let bound: f64 = r[6].parse().unwrap();
        assert_eq!(bound, (p * n).min(1.0));
    }
    assert_eq!(
        fs::read(a.join("results.csv")).unwrap(),
        fs::read(b.join("results.csv")).unwrap()
    );
}

#[test]
fn ue_sweep_has_four_points() {
    let tmp = TempDir::new().unwrap();
    // the sweep holds 16 SDUs per episode over the cell, which needs T >= 8 at N = 2
    let cfg = tmp.path().join("plan.json");
    fs::write(
        &cfg,
        TINY.replace("\"episode_len\": 6", "\"episode_len\": 24"),
    )
    .unwrap();
    let out = tmp.path().join("ues");
    let o = emac(&[
        "sweep",
        "--kind",
        "ues",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--method",
        "contention_free",
        "--method",
        "contention_based",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 4 * 2);
    let ns: Vec<&str> = rows.iter().step_by(2).map(|r| r.get(1).unwrap()).collect();
    assert_eq!(ns, ["2", "3", "4", "5"]);
}

#[test]
fn tune_pt_prints_the_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = emac(&["tune-pt", "--config", s(&cfg), "--episodes", "8"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",true")).count(), 1);
    // p_t = 0 never transmits
    assert!(lines[1].starts_with("0,0,"));
}
