use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn conet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conet")).args(args).output().expect("spawn conet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &[&str] =
    &["--n", "300", "--k", "4", "--m", "400", "--l-max", "60", "--steps", "12", "--d-min", "4", "--d-max", "4"];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let dir = dir.to_str().unwrap();
    let mut args = vec!["train", "--output-dir", dir];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    conet(&args)
}

#[test]
fn train_analyze_replay_fit() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let out = train(&run, &["--learning-rate", "0.01"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("12 steps"));
    assert!(run.join("manifest.json").is_file());

    let out = conet(&["analyze", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("t_var = "));
    assert!(run.join("report.txt").is_file() && run.join("fits.json").is_file());

    let ckpt = run.join("checkpoints/theta_5.bin");
    let out = conet(&["replay", run.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Same seed and batch size as training, so step 6 is reproduced.
    assert_eq!(fs::read(run.join("replay/hist_6.json")).unwrap(), fs::read(run.join("hist_6.json")).unwrap());

    let hist = run.join("hist_1.json");
    let out = conet(&["fit", hist.to_str().unwrap(), "--window", "4,60", "--model", "exponential"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fits: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(fits[0]["model"], "exponential");
}

#[test]
fn config_file_then_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"n": 300, "k": 4, "m": 100, "steps": 2, "l_max": 40, "d_min": 3, "d_max": 3, "graph_seed": 5}"#,
    )
    .unwrap();
    let run = tmp.path().join("run");
    let out = conet(&[
        "train",
        "--output-dir",
        run.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--m=50",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["graph_seed"], 9);
    assert_eq!(written["train_seed"], 9);
    assert_eq!(written["m"], 50);
    assert_eq!(written["steps"], 2);
}

#[test]
fn generate_graph_writes_graph_and_task() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("g/graph.txt");
    let out = conet(&[
        "generate-graph",
        "--out",
        path.to_str().unwrap(),
        "--n",
        "100",
        "--k",
        "3",
        "--d-min",
        "3",
        "--d-max",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&path).unwrap().starts_with("conet-graph v1 100 3 1"));
    let task: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("g/task.json")).unwrap()).unwrap();
    assert_eq!(task["distance"], 3);
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    for extra in [&["--k", "3", "--n", "7"][..], &["--bogus", "1"], &["--m", "lots"], &["--steps"], &["stray"]] {
        let out = train(&tmp.path().join("x"), extra);
        assert_eq!(code(&out), 2, "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(code(&conet(&["no-such-command"])), 2);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"n\": ").unwrap();
    assert_eq!(code(&conet(&["train", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn io_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&conet(&["train", "--config", missing.to_str().unwrap()])), 3);
    assert_eq!(code(&conet(&["analyze", tmp.path().to_str().unwrap()])), 3);
    assert_eq!(code(&conet(&["fit", missing.to_str().unwrap()])), 3);
}

#[test]
fn replay_with_foreign_checkpoint_exits_2() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&train(&a, &[])), 0);
    assert_eq!(code(&train(&b, &["--graph-seed", "2"])), 0);
    let ckpt = b.join("checkpoints/theta_3.bin");
    let out = conet(&["replay", a.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_resume_continues_a_run() {
    let tmp = TempDir::new().unwrap();
    let (full, part) = (tmp.path().join("full"), tmp.path().join("part"));
    assert_eq!(code(&train(&full, &[])), 0);
    assert_eq!(code(&train(&part, &["--steps", "12"])), 0);
    let ckpt = part.join("checkpoints/theta_6.bin");
    let out = train(&part, &["--resume", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(full.join("metrics.csv")).unwrap(), fs::read(part.join("metrics.csv")).unwrap());
}
