use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exitlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitlab")).args(args).output().unwrap()
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn invalid_config_exits_with_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"L": [8, 1]}"#);
    let out = exitlab(&["exit", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("L[1]"));
    assert!(!dir.path().join("o").exists());

    let cfg = write_cfg(dir.path(), r#"{"dim": 3, "typo": true}"#);
    let out = exitlab(&["exit", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_run_writes_headers_manifest_and_config_copy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"L": [4], "eps": 0.1, "seed": 9, "exit": {"mc_paths": 500}}"#);
    let o = dir.path().join("o");
    let out = exitlab(&["exit", "--config", &cfg, "--out", o.to_str().unwrap(), "--seed", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = fs::read_to_string(o.join("exit_summary.csv")).unwrap();
    let first = summary.lines().next().unwrap();
    assert!(first.starts_with("# exitlab ") && first.ends_with("seed=10"), "{first}");
    let mass: f64 = summary.lines().nth(2).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((mass - 1.0).abs() < 1e-9);

    let copy: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("exit_config.json")).unwrap()).unwrap();
    assert_eq!(copy["seed"], 10);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("exit_manifest.json")).unwrap()).unwrap();
    let arts = manifest["artifacts"].as_array().unwrap();
    assert!(arts.iter().any(|a| a["path"] == "exit_L4.csv"));
    for a in arts {
        let bytes = fs::read(o.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    assert!(fs::read_to_string(o.join("exit.svg")).unwrap().starts_with("<svg"));
    assert!(!o.join(".staging-exit").exists());
}

#[test]
fn check_flag_reports_failed_conditions_with_4() {
    let dir = tempfile::tempdir().unwrap();
    // k_max = 2 is too small for the toy schedule at L = 8.
    let cfg = write_cfg(dir.path(), r#"{"L": [8], "calibrate_k0": {"k_max": 2, "samples": 2}}"#);
    let o = dir.path().join("o");
    let args = ["calibrate-k0", "--config", &cfg, "--out", o.to_str().unwrap()];
    assert_eq!(exitlab(&args).status.code(), Some(0));
    let mut with_check = args.to_vec();
    with_check.push("--check");
    assert_eq!(exitlab(&with_check).status.code(), Some(4));
    let k0 = fs::read_to_string(o.join("k0.csv")).unwrap();
    assert!(k0.lines().nth(2).unwrap().ends_with(",false"));
}

#[test]
fn unsupported_dimension_for_green_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"dim": 2, "eps": 0.05}"#);
    let out = exitlab(&["green", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lclt_table_support_grows_linearly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"lclt": {"m": 3, "ns": [2, 4, 8]}}"#);
    let o = dir.path().join("o");
    let out = exitlab(&["lclt", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(o.join("lclt.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    // one step of π̂_3 reaches |y| = √45 (exit points lie up to r + 1 out)
    let one_step = 45f64.sqrt();
    let mut last_support = 0.0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (m, n) = (v[col("m")], v[col("n")]);
        assert_eq!(v[col("bound_2mn")], 2.0 * m * n);
        let support = v[col("support_max_norm")];
        assert!((support - n * one_step).abs() < 1e-9, "n = {n}: {support}");
        assert!(support > last_support && support < (2.0 * m + 1.0) * n);
        last_support = support;
    }
}
