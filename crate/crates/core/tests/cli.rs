use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spenc"))
        .args(args)
        .env_remove("SPENC_SEED")
        .output()
        .expect("spawn spenc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn generate(dir: &Path) -> String {
    let path = dir.join("x.csv");
    let p = path.to_str().unwrap().to_string();
    let o = spenc(&["gen", "--kind", "power-law", "--rows", "20", "--cols", "12", "--seed", "3", "-o", &p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn encode_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let x = generate(dir.path());
    let args = ["encode", "-i", &x, "-k", "2", "-r", "4", "--seed", "9", "--trials", "3"];
    let a = spenc(&args);
    let b = spenc(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_str(&stdout(&a)).unwrap();
    let run = &v["runs"][0];
    assert_eq!(run["k"], 2);
    assert!(run["combined_sparsity"].as_u64().unwrap() <= 4);
    assert!(run.get("timings").is_none());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let x = generate(dir.path());
    let flag = spenc(&["encode", "-i", &x, "-k", "1", "-r", "3", "--seed", "5"]);
    let env = Command::new(env!("CARGO_BIN_EXE_spenc"))
        .args(["encode", "-i", &x, "-k", "1", "-r", "3"])
        .env("SPENC_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn sweep_csv_has_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let x = generate(dir.path());
    let o = spenc(&[
        "sweep", "-i", &x, "--k-values", "1,2", "--r-values", "3,5", "--reps", "2", "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        sparse_encoders::harness::SWEEP_CSV_COLUMNS.join(",")
    );
    assert_eq!(lines.count(), 2 * 2 * 2);
}

#[test]
fn iterative_with_eps_reports_prefix_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let x = generate(dir.path());
    let o = spenc(&["encode", "-i", &x, "-k", "2", "--eps", "0.9", "--algorithm", "iterative"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["runs"][0]["prefix_bounds"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let o = spenc(&["encode", "-i", "/nonexistent/x.csv", "-k", "1", "-r", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["error"]["kind"], "io");
    assert_eq!(v["error"]["exit_code"], 1);
}

#[test]
fn bad_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let x = generate(dir.path());
    // r below k
    let o = spenc(&["encode", "-i", &x, "-k", "3", "-r", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["error"]["kind"], "invalid-argument");
    // conflicting sparsity flags are rejected by the parser
    let o = spenc(&["encode", "-i", &x, "-k", "1", "-r", "2", "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = spenc(&["encode", "-i", &x, "-k", "1", "-r", "2", "--algorithm", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_csv_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "1,2\n3,oops\n").unwrap();
    let o = spenc(&["encode", "-i", p.to_str().unwrap(), "-k", "1", "-r", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["error"]["kind"], "parse");
    assert!(v["error"]["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn metrics_on_an_identity_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    std::fs::write(&x, "1,0,0\n0,2,0\n0,0,3\n").unwrap();
    let h = dir.path().join("h.csv");
    std::fs::write(&h, "0\n0\n1\n").unwrap();
    let o = spenc(&["metrics", "-i", x.to_str().unwrap(), "--encoder", h.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // keeping the largest coordinate loses 1 + 4
    assert!((v["info_loss"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    assert!((v["info_loss_normalized"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["combined_sparsity"], 1);
}

#[test]
fn help_exits_cleanly() {
    assert!(spenc(&["--help"]).status.success());
    assert!(spenc(&["--version"]).status.success());
}
