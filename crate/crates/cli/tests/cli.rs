//! End-to-end tests of the `quasip` binary: the reproducibility
//! acceptance criterion plus the exit-code and output contracts.

use std::path::Path;
use std::process::{Command, Output};

fn quasip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasip"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, patch: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let init = quasip(&["init", "--config", path.to_str().unwrap()]);
    assert!(init.status.success());
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let patch: serde_json::Value = serde_json::from_str(patch).unwrap();
    merge(&mut cfg, &patch);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

const FAST_PATCH: &str = r#"{
    "grid_k": 1024,
    "green_kubo": {"n_max": 32, "window": 64},
    "blocks": {"beta": 0.55, "eps": 0.05, "n_levels": 8},
    "simulation": {"n_steps": 512, "n_paths": 400, "extra_checkpoints": [], "seed": 42,
                   "jitter": {"policy": "auto"}}
}"#;

const PAYLOAD_FILES: [&str; 6] = [
    "density.csv",
    "decay.json",
    "sigma.json",
    "blocks.csv",
    "paths.csv",
    "diagnostics.json",
];

#[test]
fn criterion_9_reproducibility() {
    let started = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_PATCH);
    let cfg = cfg.to_str().unwrap();

    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    let out3 = tmp.path().join("run3");
    for (out, threads) in [(&out1, "1"), (&out2, "4"), (&out3, "4")] {
        let r = quasip(&[
            "run",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(
            r.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }
    for name in PAYLOAD_FILES {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        let c = std::fs::read(out3.join(name)).unwrap();
        assert!(a == b, "{name} differs between 1 and 4 threads");
        assert!(b == c, "{name} differs between identical reruns");
    }
    let secs = started.elapsed().as_secs_f64();
    println!("acceptance 9 reproducibility: PASS ({secs:.2} s, limit 60 s)");
    assert!(secs < 60.0, "criterion 9 exceeded its budget: {secs:.2} s");
}

#[test]
fn run_doubling_cos_sigma_near_half() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_PATCH);
    let out = tmp.path().join("out");
    let r = quasip(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let sigma: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sigma.json")).unwrap()).unwrap();
    let s = sigma["sigma2"][0][0].as_f64().unwrap();
    assert!((s - 0.5).abs() < 0.02, "sigma2 = {s}");
    assert!(sigma["config_hash"].as_str().unwrap().len() == 64);
    // every structured report carries the same config hash
    for name in ["decay.json", "diagnostics.json"] {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap();
        assert_eq!(v["config_hash"], sigma["config_hash"], "{name}");
    }
}

#[test]
fn coboundary_exits_2_with_degenerate_direction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "grid_k": 4096,
            "green_kubo": {"n_max": 48, "window": 32},
            "blocks": {"beta": 0.55, "eps": 0.05, "n_levels": 8},
            "simulation": {"n_steps": 512, "n_paths": 200, "extra_checkpoints": [],
                           "seed": 7, "jitter": {"policy": "auto"}},
            "observable": [{"preset": "coboundary", "q": {"preset": "cos"}}]
        }"#,
    );
    let out = tmp.path().join("out");
    let r = quasip(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    let sigma: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sigma.json")).unwrap()).unwrap();
    assert!(sigma["degenerate_direction"].is_array());
    let failure: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("failure.json")).unwrap()).unwrap();
    assert_eq!(failure["failed_hypothesis"], "covariance-nondegenerate");
}

#[test]
fn malformed_beta_exits_1_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"blocks": {"beta": 1.2, "eps": 0.05, "n_levels": 8}}"#);
    let r = quasip(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("blocks.beta"), "stderr: {err}");
}

#[test]
fn blocks_subcommand_level_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "blocks": {"beta": 0.5, "eps": 0.2, "n_levels": 4},
            "simulation": {"n_steps": 64, "n_paths": 100, "extra_checkpoints": [],
                           "seed": 1, "jitter": {"policy": "auto"}}
        }"#,
    );
    let out = tmp.path().join("out");
    let r = quasip(&[
        "blocks",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(out.join("blocks.csv")).unwrap();
    let level4: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("4,"))
        .collect();
    assert_eq!(level4.len(), 8, "level 4 should have 4 gaps + 4 blocks");
    assert_eq!(level4.iter().filter(|l| l.contains(",J,")).count(), 4);
    assert_eq!(level4.iter().filter(|l| l.contains(",I,")).count(), 4);
}

#[test]
fn density_subcommand_uniform_for_doubling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_PATCH);
    let out = tmp.path().join("out");
    let r = quasip(&[
        "density",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "64",
    ]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(out.join("density.csv")).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("cell")) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{line}");
    }
}

#[test]
fn verify_subcommand_all_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_PATCH);
    let out = tmp.path().join("out");
    let r = quasip(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let stdout = String::from_utf8_lossy(&r.stdout);
    for prop in [
        "mass-conservation",
        "equivariance",
        "block-tiling",
        "polarization",
        "uniform-decay",
    ] {
        assert!(stdout.contains(&format!("PASS {prop}")), "stdout: {stdout}");
    }
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn missing_config_exits_1() {
    let r = quasip(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(r.status.code(), Some(1));
}
