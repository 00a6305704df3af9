use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hopfkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopfkit"))
        .args(args)
        .env("HOPFKIT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn problem(dir: &Path, name: &str, u: &str) -> String {
    let path = dir.join(name);
    let body = serde_json::json!({
        "version": "hopfkit-problem-v1",
        "kind": "hopf_left",
        "order": 2,
        "interval": [0.0, 1.0],
        "coefficients": ["0", "0"],
        "u": { "expr": u },
    });
    fs::write(&path, body.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

#[test]
fn parabola_holds() {
    let dir = tempfile::tempdir().unwrap();
    let out = hopfkit(&["run", &problem(dir.path(), "p.json", "x - x^2")]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["verdict"]["status"], "HOLDS");
    let item = r["verdict"]["conclusions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "endpoint_derivative")
        .unwrap();
    assert!((item["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&out.stderr).contains("HOLDS"));
}

#[test]
fn negative_function_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hopfkit(&["run", &problem(dir.path(), "n.json", "-x")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["verdict"]["status"], "HYPOTHESES_UNMET");
}

#[test]
fn parse_error_exits_three_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let out = hopfkit(&["run", &problem(dir.path(), "b.json", "sin(")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("position 4"));
}

#[test]
fn missing_file_and_bad_flags_exit_three() {
    assert_eq!(hopfkit(&["run", "/nonexistent/p.json"]).status.code(), Some(3));
    assert_eq!(hopfkit(&["run"]).status.code(), Some(3));
    assert_eq!(hopfkit(&["frobnicate"]).status.code(), Some(3));
}

#[test]
fn out_and_csv_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ivp.json");
    let body = serde_json::json!({
        "version": "hopfkit-problem-v1",
        "kind": "hopf_left",
        "order": 2,
        "interval": [0.0, 1.0],
        "coefficients": ["1", "x"],
        "u": { "ivp": { "init": [0.0, 1.0] } },
    });
    fs::write(&path, body.to_string()).unwrap();
    let report_path = dir.path().join("r.json");
    let csv = dir.path().join("u.csv");
    let out = hopfkit(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty() && out.stderr.is_empty());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(r["schema"], "hopfkit-report-v1");
    assert!(fs::read_to_string(csv).unwrap().lines().count() > 100);
}

#[test]
fn echoed_problem_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let first = report(&hopfkit(&["run", &problem(dir.path(), "p.json", "x - x^2 + x^3/5")]));
    let echo = dir.path().join("echo.json");
    fs::write(&echo, first["problem"].to_string()).unwrap();
    let second = report(&hopfkit(&["run", echo.to_str().unwrap()]));
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("generated_at");
        v
    };
    assert_eq!(strip(first), strip(second));
}

#[test]
fn gallery_commands() {
    let list = hopfkit(&["gallery", "list"]);
    assert_eq!(list.status.code(), Some(0));
    let text = String::from_utf8_lossy(&list.stdout).to_string();
    assert!(text.lines().count() >= 10);
    let id = text.split_whitespace().next().unwrap().to_string();

    let export = hopfkit(&["gallery", "export", &id]);
    assert_eq!(export.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.json");
    fs::write(&path, &export.stdout).unwrap();
    assert_eq!(hopfkit(&["run", path.to_str().unwrap()]).status.code(), Some(0));

    assert_eq!(hopfkit(&["gallery", "run", &id]).status.code(), Some(0));
    assert_eq!(hopfkit(&["gallery", "export", "no-such-case"]).status.code(), Some(3));
}

#[test]
fn gallery_selftest_passes() {
    let out = hopfkit(&["selftest", "--gallery-only", "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}
