use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bwgan_core::checkpoint::Checkpoint;
use bwgan_core::cli::formats::{read_metrics_csv, CSV_HEADER};
use bwgan_core::nn::{Activation, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bwgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwgan")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
  "train": {
    "total_iterations": 10,
    "batch_size": 16,
    "n_critic": 2,
    "latent_dim": 4,
    "generator_hidden": [16],
    "critic_hidden": [16],
    "heuristic_samples": 64,
    "monitor_every": 5,
    "seed": 3
  }
}"#;

#[test]
fn norm_prints_both_norms() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "x.txt", "3 4\n");
    let o = bwgan(&["norm", &f, "--space", "lp", "--p", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "norm=5.000000000000 dual=5.000000000000");
}

#[test]
fn zero_smoothness_matches_lebesgue_on_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let vals: Vec<String> = (0..64)
        .map(|i| format!("{}", ((i * 37) % 11) as f64 / 3.0 - 1.5))
        .collect();
    let f = write(dir.path(), "img.txt", &vals.join(" "));
    let parse = |o: &Output| -> Vec<f64> {
        stdout(o)
            .split_whitespace()
            .map(|kv| kv.split_once('=').unwrap().1.parse().unwrap())
            .collect()
    };
    let sob = parse(&bwgan(&[
        "norm", &f, "--space", "sobolev", "--s", "0", "--p", "3", "--shape", "1x8x8",
    ]));
    let lp = parse(&bwgan(&["norm", &f, "--space", "lp", "--p", "3", "--shape", "1x8x8"]));
    for (a, b) in sob.iter().zip(&lp) {
        assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
    }
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.txt", "1 two 3\n");
    let o = bwgan(&["norm", &f]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(bwgan(&["norm", "/nonexistent/file"]).status.code(), Some(2));
    assert_eq!(bwgan(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn heuristics_are_self_dual_in_l2() {
    let o = bwgan(&["heuristics", "--dim", "16", "--samples", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let get = |k: &str| {
        text.split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{k}=")))
            .unwrap()
            .to_owned()
    };
    assert_eq!(get("lambda"), get("gamma"));
    assert_eq!(get("samples"), "200");
    assert_eq!(bwgan(&["heuristics", "--samples", "0"]).status.code(), Some(2));
}

#[test]
fn train_writes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bwgan(&["train", &cfg, "--output", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(csv.clone()).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_metrics_csv(csv.as_slice()).unwrap();
    assert_eq!(rows.len(), 10);
    let monitored: Vec<usize> = rows.iter().filter(|r| r.exact_w1.is_some()).map(|r| r.iter).collect();
    assert_eq!(monitored, vec![0, 5, 9]);
    for name in ["generator.bwgn", "critic.bwgn"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 10);
    assert!(summary["lambda"].as_f64().unwrap() > 0.0);
    Checkpoint::load(a.join("critic.bwgn")).unwrap().critic().unwrap();
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"train": {"lamda": 10}}"#);
    let o = bwgan(&["train", &cfg, "--output", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));
}

#[test]
fn divergence_exits_3_with_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "hot.json",
        r#"{"train": {"total_iterations": 50, "batch_size": 8, "n_critic": 1, "latent_dim": 2,
            "generator_hidden": [8], "critic_hidden": [8], "heuristic_samples": 16,
            "monitor_every": 0, "adam": {"lr": 1e300, "linear_decay": false}}}"#,
    );
    let out = dir.path().join("out");
    let o = bwgan(&["train", &cfg, "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["diverged_at"].is_u64());
    assert!(fs::read_to_string(out.join("metrics.csv"))
        .unwrap()
        .starts_with(CSV_HEADER));
}

#[test]
fn wasserstein_between_measure_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "# two points\n0.5 0 0\n0.5 1 0\n");
    let b = write(dir.path(), "b.txt", "1.0 0 3\n");
    let o = bwgan(&["wasserstein", &a, &a]);
    assert_eq!(stdout(&o).trim(), "w_p=0");
    let s1 = write(dir.path(), "s1.txt", "1 0 0\n");
    let s2 = write(dir.path(), "s2.txt", "1 3 4\n");
    for p in ["1", "2", "3.5"] {
        let o = bwgan(&["wasserstein", &s1, &s2, "--wp", p]);
        let d: f64 = stdout(&o).trim().strip_prefix("w_p=").unwrap().parse().unwrap();
        assert!((d - 5.0).abs() < 1e-10);
    }
    let o = bwgan(&["wasserstein", &a, &b, "--space", "lp", "--p", "1"]);
    let d: f64 = stdout(&o).trim().strip_prefix("w_p=").unwrap().parse().unwrap();
    assert!((d - 3.5).abs() < 1e-10, "{d}");
    let bad = write(dir.path(), "bad.txt", "0.5 0 0\n0.4 1 1\n");
    assert_eq!(bwgan(&["wasserstein", &a, &bad]).status.code(), Some(2));
}

#[test]
fn dual_check_reports_a_nonnegative_gap_for_a_small_critic() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "0.5 0 0\n0.5 1 0\n");
    let b = write(dir.path(), "b.txt", "1.0 0 3\n");
    let mlp = Mlp::new(vec![2, 4, 1], Activation::Tanh).unwrap();
    let mut params = mlp.init(&mut ChaCha8Rng::seed_from_u64(0));
    for t in &mut params {
        for v in t.data_mut() {
            *v *= 0.1;
        }
    }
    let ckpt = dir.path().join("c.bwgn");
    Checkpoint::new(Activation::Tanh, params).save(&ckpt).unwrap();
    let o = bwgan(&["wasserstein", &a, &b, "--check-dual", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().nth(1).unwrap();
    let gap: f64 = line
        .split_whitespace()
        .last()
        .unwrap()
        .strip_prefix("gap=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap >= 0.0, "{line}");
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.json",
        r#"{"lemma1_pairs": 4, "holder_vectors": 3, "holder_directions": 200, "sobolev_signals": 5, "fd_probes": 5}"#,
    );
    let ok = bwgan(&["verify", "--config", &cfg]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().count(), 4);
    let only = bwgan(&["verify", "--config", &cfg, "--suite", "lemma1"]);
    assert_eq!(stdout(&only).lines().count(), 1);
    assert!(stdout(&only).contains("lemma1"));
    let bad = bwgan(&[
        "verify",
        "--config",
        &cfg,
        "--suite",
        "holder",
        "--perturb-dual-norm",
        "0.01",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).starts_with("FAIL"));
    let typo = write(dir.path(), "t.json", r#"{"lemma_pairs": 4}"#);
    assert_eq!(bwgan(&["verify", "--config", &typo]).status.code(), Some(2));
}
