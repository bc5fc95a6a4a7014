use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn immidx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_immidx"))
        .args(args)
        .env("IMMIDX_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn emit(dir: &TempDir, name: &str) -> PathBuf {
    let path = dir.path().join(format!("{name}.json"));
    let out = immidx(&["examples", "emit", name, "--out", path.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn index_of_trivial_plane() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "trivial-2");
    let out = immidx(&["index", "--spec", p(&spec)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["sign_sum"], 0);
    assert_eq!(v["integral"], 0);
    assert_eq!(v["agree"], true);
}

#[test]
fn index_of_lifted_example() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "lifted");
    let out = immidx(&["index", "--spec", p(&spec)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["agree"], true);
    assert_eq!(v["sign_sum"].as_i64().unwrap().abs(), 1);
    assert_eq!(v["integral"], v["sign_sum"]);
}

#[test]
fn odd_dimension_reports_parity() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "trivial-3");
    let v = json(&immidx(&["index", "--spec", p(&spec)]));
    assert_eq!(v["parity"], 0);
    assert!(v.get("integral").is_none());
}

#[test]
fn curve_index_uses_rotation_integral() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "one-loop");
    let v = json(&immidx(&["index", "--spec", p(&spec)]));
    assert_eq!(v["agree"], true);
    assert_eq!(v["whitney_1d"].as_i64().unwrap().abs(), 1);
    assert_eq!(v["whitney_1d"], v["sign_sum"]);
}

#[test]
fn intersection_counts() {
    let dir = TempDir::new().unwrap();
    for (name, count) in [("trivial-2", 0), ("one-loop", 1), ("lifted-twice", 2)] {
        let spec = emit(&dir, name);
        let out = immidx(&["intersections", "--spec", p(&spec)]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let v = json(&out);
        assert_eq!(v["records"].as_array().unwrap().len(), count, "{name}");
    }
}

#[test]
fn grid_flag_reaches_the_solver() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "one-loop");
    let v = json(&immidx(&[
        "intersections",
        "--spec",
        p(&spec),
        "--grid",
        "13",
    ]));
    assert_eq!(v["solver"]["grid_points_per_axis"], 13);
    assert_eq!(v["records"].as_array().unwrap().len(), 1);
}

#[test]
fn closedness_check_and_detector() {
    let out = immidx(&["check-form", "--n", "2", "--samples", "20", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["pass"], true);

    let out = immidx(&["check-form", "--samples", "20", "--perturb"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["pass"], false);
}

#[test]
fn zero_samples_pass_with_warning() {
    let out = immidx(&["check-form", "--samples", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["pass"], true);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vacuous"));
}

#[test]
fn laplace_on_trivial_is_zero() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "trivial-2");
    let out = immidx(&["check-laplace", "--spec", p(&spec), "--lambdas", "25,50"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for r in v["reports"].as_array().unwrap() {
        for key in ["j_value", "diag_value", "selfint_value", "defect"] {
            assert_eq!(r[key].as_f64(), Some(0.0), "{key}");
        }
    }
}

#[test]
fn validate_passes_for_lifted() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "lifted");
    let out = immidx(&["validate", "--spec", p(&spec), "--h", "1e-5"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["pass"], true);
}

#[test]
fn eval_reports_both_integrands() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "lifted");
    let v = json(&immidx(&["eval", "--spec", p(&spec), "--x", "-0.3,0.1"]));
    let a = v["integrand_pullback"].as_f64().unwrap();
    let b = v["integrand_direct"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    assert_eq!(v["value"].as_array().unwrap().len(), 4);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "one-loop");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let status = Command::new(env!("CARGO_BIN_EXE_immidx"))
            .args(["index", "--spec", p(&spec), "--out", p(out)])
            .env("IMMIDX_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"builder": "spiral"}"#).unwrap();
    assert_eq!(immidx(&["index", "--spec", p(&bad)]).status.code(), Some(1));

    let spec = emit(&dir, "trivial-2");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"solver": {"grid": 3}}"#).unwrap();
    let out = immidx(&["index", "--spec", p(&spec), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(immidx(&["index"]).status.code(), Some(1));
    assert_eq!(immidx(&["examples", "emit", "nope"]).status.code(), Some(1));
}

#[test]
fn config_overrides_apply() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "one-loop");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"solver": {"grid_points_per_axis": 11}}"#).unwrap();
    let v = json(&immidx(&[
        "intersections",
        "--spec",
        p(&spec),
        "--config",
        p(&cfg),
    ]));
    assert_eq!(v["solver"]["grid_points_per_axis"], 11);
}

#[test]
fn rounding_failure_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let spec = emit(&dir, "one-loop");
    let cfg = dir.path().join("cfg.json");
    // A single 3-point cell cannot resolve the curve's turning.
    std::fs::write(
        &cfg,
        r#"{"quadrature": {"rule_order": 3, "initial_divisions": 1, "abs_tol": 10, "rel_tol": 10}}"#,
    )
    .unwrap();
    let out = immidx(&["index", "--spec", p(&spec), "--config", p(&cfg)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("too far from an integer"), "{stderr}");
}
