//! End-to-end runs of the `ddsls` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ddsls(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsls"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("DDSLS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], out: &Path) -> Value {
    let o = ddsls(args, out);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.in.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                map.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    map
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", "--seed", "11"], &a);
    run_ok(&["simulate", "--seed", "11"], &b);
    let (fa, fb) = (files(&a.join("ensemble")), files(&b.join("ensemble")));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);

    let c = tmp.path().join("c");
    run_ok(&["simulate", "--seed", "12"], &c);
    assert_ne!(fa, files(&c.join("ensemble")));
}

#[test]
fn noiseless_synthesis_recovers_the_optimal_cost() {
    let tmp = TempDir::new().unwrap();
    let v = run_ok(&["synth", "--mode", "noiseless"], tmp.path());
    let (jstar, jhat) = (v["jstar"].as_f64().unwrap(), v["jhat"].as_f64().unwrap());
    assert!((jhat - jstar).abs() <= 1e-6 * jstar, "{jhat} vs {jstar}");
    assert!(v["summary"]["gamma"].is_null());
    assert!(tmp.path().join("synthesis").is_dir());
    assert!(tmp.path().join("config.json").is_file());
}

#[test]
fn naive_synthesis_has_no_gamma() {
    let tmp = TempDir::new().unwrap();
    let v = run_ok(&["synth", "--mode", "naive"], tmp.path());
    assert!(v["summary"]["gamma"].is_null());
    assert!(v["summary"]["epsilon"].is_null());
}

#[test]
fn robust_synthesis_reports_gamma_in_unit_interval() {
    let tmp = TempDir::new().unwrap();
    let v = run_ok(&["synth", "--mode", "robust"], tmp.path());
    let gamma = v["summary"]["gamma"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&gamma), "{gamma}");
    assert!(v["jhat"].as_f64().unwrap() >= v["jstar"].as_f64().unwrap() * (1.0 - 1e-9));
}

#[test]
fn bounds_table_starts_at_zero_and_is_monotone() {
    let tmp = TempDir::new().unwrap();
    let v = run_ok(&["bounds"], tmp.path());
    assert!(v["eps_max"].as_f64().unwrap() > 0.0);
    assert!(v["sample_complexity"].as_u64().unwrap() > 0);

    let mut reader = csv::Reader::from_path(tmp.path().join("bounds.csv")).unwrap();
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    assert_eq!(num(&rows[0], 0), 0.0);
    assert_eq!(num(&rows[0], 2), 0.0);
    for pair in rows.windows(2) {
        assert!(num(&pair[1], 0) > num(&pair[0], 0));
        // Suboptimality bound grows with ε; tail bounds shrink.
        assert!(num(&pair[1], 2) >= num(&pair[0], 2));
        assert!(num(&pair[1], 4) <= num(&pair[0], 4));
        assert!(num(&pair[1], 5) <= num(&pair[0], 5));
    }
}

#[test]
fn bad_config_gives_json_error_and_failure_status() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"horizons": {"L": 10, "T": 5}}"#);
    let o = ddsls(&["synth", "--config", &cfg], &tmp.path().join("out"));
    assert!(!o.status.success());
    let err: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    assert!(err["error"].is_string());
    assert!(!err["message"].as_str().unwrap().is_empty());

    let cfg = write_config(tmp.path(), r#"{"unknown_field": 1}"#);
    let o = ddsls(&["synth", "--config", &cfg], &tmp.path().join("out"));
    assert!(!o.status.success());
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "json");

    let o = ddsls(&["synth", "--mode", "sideways"], &tmp.path().join("out"));
    assert!(!o.status.success());
}

#[test]
fn mpc_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"horizons": {"H": 60}, "sampling": {"N_list": [8], "trials": 2, "seed": 5}}"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let va = run_ok(&["mpc", "--config", &cfg], &a);
    let vb = run_ok(&["mpc", "--config", &cfg], &b);
    assert_eq!(va, vb);
    assert_eq!(va.as_array().unwrap().len(), 4);
    for controller in ["optimal", "bootstrap", "true", "naive"] {
        let name = format!("mpc_{controller}_N8.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}
