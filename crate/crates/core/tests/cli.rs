//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn nestcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestcov"))
        .args(args)
        .env("NESTCOV_THREADS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_ok(command: &str, config: &str, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut args = vec![command, "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = nestcov(&args);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap().lines().map(str::to_string).collect()
}

/// Asserts a single-line `error: <category>: ...` message and returns the category.
fn error_category(o: &Output) -> String {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    let rest = lines[0].strip_prefix("error: ").expect("error prefix");
    rest.split(':').next().unwrap().to_string()
}

const DIAG: &str = r#"{
  "kind": "diag_decay",
  "grid": { "rows": 4, "cols": 4 },
  "truth": { "c": 30, "alpha": 0.002 },
  "sample_sizes": [5, 10],
  "replications": 6,
  "seed": 9
}"#;

#[test]
fn simulate_diag_writes_csv_and_valid_svg() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "diag.json", DIAG);
    let out = dir.path().join("out");
    let written = run_ok("simulate-diag", &cfg, &out, &["--format", "csv+svg"]);
    assert_eq!(written.len(), 2);

    let csv = std::fs::read_to_string(out.join("simulate-diag.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("estimator,N,mean_sq_frobenius,std_error,replications"));
    assert_eq!(lines.count(), 5 * 2);

    let svg = std::fs::read_to_string(out.join("simulate-diag.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    assert_eq!(count("polyline"), 5);
    assert!(count("circle") >= 5 * 2);
}

#[test]
fn seed_override_controls_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "diag.json", DIAG);
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        run_ok("simulate-diag", &cfg, &out, &["--seed", seed]);
        std::fs::read(out.join("simulate-diag.csv")).unwrap()
    };
    assert_eq!(read("a", "5"), read("b", "5"));
    assert_ne!(read("c", "5"), read("d", "6"));
}

#[test]
fn fisher_trace_and_estimate_commands() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "diag.json", DIAG);
    let out = dir.path().join("out");
    run_ok("fisher-trace", &cfg, &out, &["--format", "csv+svg"]);
    let trace = std::fs::read_to_string(out.join("fisher-trace.csv")).unwrap();
    assert!(trace.starts_with("model,N,trace_mse\n"));
    assert_eq!(trace.lines().count(), 1 + 3 * 2);
    roxmltree::Document::parse(&std::fs::read_to_string(out.join("fisher-trace.svg")).unwrap()).unwrap();

    run_ok("estimate", &cfg, &out, &[]);
    let est = std::fs::read_to_string(out.join("estimate.csv")).unwrap();
    assert!(est.starts_with("estimator,N,parameter,value\n"));
    assert!(est.lines().any(|l| l.starts_with("decay2,5,alpha,")));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let o = nestcov(&["simulate-everything", "--config", "x.json", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_category(&o), "usage_error");

    let o = nestcov(&["simulate-diag", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_category(&o), "usage_error");
}

#[test]
fn runtime_errors_are_single_line_with_category() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let missing = dir.path().join("absent.json");
    let o = nestcov(&["simulate-diag", "--config", missing.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_category(&o), "io_error");

    let cfg = write_config(dir.path(), "broken.json", "{\n  \"kind\": \"diag_decay\",\n  \"grid\": \n}");
    let o = nestcov(&["simulate-diag", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_category(&o), "parse_error");

    let cfg = write_config(dir.path(), "bad.json", r#"{ "kind": "diag_decay", "replications": 0 }"#);
    let o = nestcov(&["simulate-diag", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_category(&o), "validation_error");

    let cfg = write_config(dir.path(), "diag.json", DIAG);
    let o = nestcov(&["simulate-gmrf", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_category(&o), "validation_error");
}
