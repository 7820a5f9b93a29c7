use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn finepo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finepo"))
        .args(args)
        .env_remove("FINEPO_SEED")
        .output()
        .expect("binary runs")
}

fn step(x: u16, len: u32, judgment: &str) -> String {
    format!(
        r#"{{"intent":"mark","action":{{"type":"point","x":{x},"y":500}},"token_length":{len},"judgment":"{judgment}"}}"#
    )
}

fn response(prompt: &str, reward: f64, steps: &[String]) -> String {
    format!(
        r#"{{"prompt_id":"{prompt}","terminal_reward":{reward:.1},"total_token_length":{},"steps":[{}],"final_answer":"x"}}"#,
        40,
        steps.join(",")
    )
}

/// Two responses, rewards [1, 0], each with an Excellent then a Poor point step of lengths 10 and 30.
fn worked_group() -> String {
    let steps = [step(100, 10, "Excellent"), step(200, 30, "Poor")];
    format!(
        "{}\n{}\n",
        response("p0", 1.0, &steps),
        response("p0", 0.0, &steps)
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn records(stdout: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn redistribute_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.jsonl", &worked_group());
    let out = finepo(&["redistribute", "--input", &input, "--k", "2", "--stdout"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recs = records(&out.stdout);
    assert_eq!(recs.len(), 2);
    let expect = [[0.6, 0.466667], [-0.4, -0.533333]];
    for (rec, want) in recs.iter().zip(expect) {
        let got: Vec<f64> = rec["step_advantages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
        }
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("groups processed: 1"));
}

#[test]
fn redistribute_tokens_and_file_output_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.jsonl", &worked_group());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let out = finepo(&[
            "redistribute",
            "-i",
            &input,
            "--k",
            "2",
            "--tokens",
            "-o",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let first = fs::read(&a).unwrap();
    assert_eq!(first, fs::read(&b).unwrap());
    let recs = records(&first);
    assert_eq!(recs[0]["token_advantages"].as_array().unwrap().len(), 40);
}

#[test]
fn redistribute_window_state_persists() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.jsonl", &worked_group());
    let state = dir.path().join("window.json");
    let s = state.to_str().unwrap();
    for _ in 0..2 {
        let out = finepo(&[
            "redistribute",
            "-i",
            &input,
            "--k",
            "2",
            "--stdout",
            "--window-state",
            s,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(state.exists());
}

#[test]
fn redistribute_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "empty.jsonl", "");
    let out = finepo(&["redistribute", "-i", &input, "--stdout"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn redistribute_rejects_incomplete_group() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.jsonl", &worked_group());
    let out = finepo(&["redistribute", "-i", &input, "--k", "3", "--stdout"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p0"));
}

#[test]
fn malformed_line_and_missing_file_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}not json\n", worked_group());
    let input = write(dir.path(), "bad.jsonl", &text);
    let out = finepo(&["redistribute", "-i", &input, "--k", "2", "--stdout"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('3'));

    let missing = dir.path().join("nope.jsonl");
    let out = finepo(&["redistribute", "-i", missing.to_str().unwrap(), "--stdout"]);
    assert_eq!(out.status.code(), Some(3));

    let out = finepo(&["redistribute", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_reports_each_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.jsonl", &worked_group());
    let out = finepo(&["inspect", &good, "--k", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("line 1: OK") && text.contains("line 2: OK"));
    assert!(text.contains("1 complete group(s) of 2"));

    let bad = write(
        dir.path(),
        "bad.jsonl",
        &format!("{}{{}}\n", worked_group()),
    );
    let out = finepo(&["inspect", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 3: ERROR"));
}

#[test]
fn config_keys_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "t.jsonl", &worked_group());
    let cfg = write(dir.path(), "c.toml", "k = 2\nalpha = 0.2\n");
    let out = finepo(&["redistribute", "--config", &cfg, "-i", &input, "--stdout"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let unknown = write(dir.path(), "u.toml", "k = 2\nalhpa = 0.2\n");
    let out = finepo(&[
        "redistribute",
        "--config",
        &unknown,
        "-i",
        &input,
        "--stdout",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alhpa"));

    let out = finepo(&[
        "redistribute",
        "--set",
        "alpha=-1",
        "--set",
        "k=2",
        "-i",
        &input,
        "--stdout",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = finepo(&[
        "redistribute",
        "--set",
        "alpha=0",
        "--set",
        "k=2",
        "-i",
        &input,
        "--stdout",
    ]);
    assert!(out.status.success());
    let recs = records(&out.stdout);
    assert_eq!(recs[0]["step_advantages"], serde_json::json!([0.5, 0.5]));
}

#[test]
fn help_lists_config_keys() {
    let out = finepo(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in [
        "kl_lambda",
        "kl_clip_gamma",
        "window_batches",
        "alpha",
        "beta",
        "epsilon",
        "sim_mode",
    ] {
        assert!(text.contains(key), "help is missing `{key}`");
    }
}

const SCENE: &str = r#"{"width":256,"height":256,"background":[255,255,255],"targets":[
 {"id":"t0","primitive":{"type":"point","x":500,"y":500},"intent":"mark the center"}]}"#;

#[test]
fn heatmap_writes_csv_and_png() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "scene.json", SCENE);
    let out_dir = dir.path().join("hm");
    let out = finepo(&[
        "heatmap",
        "--scene",
        &scene,
        "--target",
        "t0",
        "--grid",
        "32",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("heatmap.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 32);
    assert!(rows.iter().all(|r| r.split(',').count() == 32));
    let png = fs::read(out_dir.join("heatmap.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");

    let out = finepo(&[
        "heatmap", "--scene", &scene, "--target", "missing", "--stdout",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forge_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for p in [&a, &b] {
        let out = finepo(&[
            "forge",
            "--n",
            "100",
            "--seed",
            "5",
            "-o",
            p.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let msg = String::from_utf8_lossy(&out.stderr).to_string();
        assert!(
            msg.contains("Excellent=20") && msg.contains("Acceptable=40"),
            "{msg}"
        );
        assert!(
            msg.contains("Poor=30") && msg.contains("Unacceptable=10"),
            "{msg}"
        );
    }
    let list = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        v.sort();
        v
    };
    assert_eq!(list(&a), list(&b));
    for name in list(&a) {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_file() {
            assert_eq!(
                fs::read(pa).unwrap(),
                fs::read(pb).unwrap(),
                "{name:?} differs"
            );
        }
    }
    let out = finepo(&[
        "forge",
        "--n",
        "10",
        "--label-ratio",
        "1:2",
        "-o",
        a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let o = out_dir.to_str().unwrap();
    let out = finepo(&[
        "simulate",
        "--mode",
        "finepo,grpo",
        "--seeds",
        "2",
        "--iters",
        "5",
        "--plot",
        "-o",
        o,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for mode in ["finepo", "grpo"] {
        for seed in 0..2 {
            let csv =
                fs::read_to_string(out_dir.join(mode).join(format!("metrics_seed{seed}.csv")))
                    .unwrap();
            assert_eq!(csv.lines().count(), 6);
            assert!(out_dir
                .join(mode)
                .join(format!("curve_seed{seed}.png"))
                .exists());
        }
    }
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);

    let first = fs::read(out_dir.join("finepo/metrics_seed1.csv")).unwrap();
    let out = finepo(&[
        "simulate", "--mode", "finepo", "--seeds", "1", "--iters", "5", "-o", o,
    ]);
    assert!(out.status.success());
    let again = finepo(&[
        "simulate", "--mode", "finepo", "--seeds", "0,1", "--iters", "5", "-o", o,
    ]);
    assert!(again.status.success());
    assert_eq!(
        first,
        fs::read(out_dir.join("finepo/metrics_seed1.csv")).unwrap()
    );

    let out = finepo(&["simulate", "--mode", "ppo", "-o", o]);
    assert_eq!(out.status.code(), Some(1));
}
