mod common;

use std::fs;
use std::path::Path;
use std::process::Output;

use psyprobe::report::AssessmentReport;

use common::{bin, data};

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("PSYPROBE_ENDPOINT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assess(dir: &Path, mock: &str, indexing: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(format!("{}-{indexing}.json", mock.replace([':', '='], "_")));
    let toy = data("toy.csv");
    let mut args = vec![
        "assess",
        "--inventory",
        toy.to_str().unwrap(),
        "--backend",
        mock,
        "--indexing",
        indexing,
        "--template",
        "og-ns-q-i-a-i",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "assess failed: {}", stderr(&o));
    out
}

#[test]
fn lists_all_templates() {
    let o = run(&["templates"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 72);
    assert_eq!(text.lines().filter(|l| l.starts_with("indexed\t")).count(), 36);

    let o = run(&["templates", "--render", "og-ns-q-i-a-ii", "--indexing", "nonindexed", "--situation", "enjoy parties"]);
    let text = stdout(&o);
    assert!(text.starts_with("Given a description of you: \"You enjoy parties.\""));
    assert!(text.contains("My answer: I choose option"));
}

#[test]
fn assess_report_and_symmetry_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let md = dir.path().join("r.md");
    let steady = assess(
        dir.path(),
        "mock:constant=MA",
        "nonindexed",
        &["--markdown", md.to_str().unwrap()],
    );
    let report = AssessmentReport::from_json(&fs::read_to_string(&steady).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 5);
    assert!(report.symmetry.pass);
    assert!(fs::read_to_string(&md).unwrap().contains("| Human |"));

    let o = run(&["symmetry", steady.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS"));

    let biased = assess(dir.path(), "mock:index=A", "indexed", &[]);
    let o = run(&["symmetry", biased.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
    // A permissive threshold flips the verdict.
    let o = run(&["symmetry", biased.to_str().unwrap(), "--tau", "0"]);
    assert_eq!(o.status.code(), Some(0));

    let o = run(&["report", steady.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("## OCEAN scores"));
    assert!(text.contains("| Original | 3.00 ± 1.00 |"));
}

#[test]
fn calibrate_updates_a_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = assess(dir.path(), "mock:constant=VA", "nonindexed", &[]);
    let out = dir.path().join("cal.json");
    let o = run(&["calibrate", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = AssessmentReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    let cal = report.calibration.unwrap();
    assert_eq!(cal.uncalibrated_max_label_share, 1.0);
    assert!(cal.max_label_share < 1.0);
    assert!(report.config.calibrate);
}

#[test]
fn config_file_paths_resolve_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(data("toy.csv"), dir.path().join("inv.csv")).unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"inventory": "inv.csv", "backend": {"kind": "mock", "behavior": "constant=VI"},
            "indexing": "indexed", "template": "lc-s-q-ii-a-i", "orders": ["Original", "Reverse"],
            "sigma": "sample"}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let o = run(&["assess", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = AssessmentReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(report.template, "[lc]-[s]-[q-ii]-[a-i]");
    assert_eq!(report.config.sigma, psyprobe::SigmaKind::Sample);
}

#[test]
fn select_template_prints_ranking() {
    let inv = data("synthetic_mpi.jsonl");
    let o = run(&[
        "select-template",
        "--inventory",
        inv.to_str().unwrap(),
        "--backend",
        "mock:uniform",
        "--indexing",
        "indexed",
        "--sample-per-trait",
        "2",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ranking"].as_array().unwrap().len(), 36);
}

#[test]
fn errors_exit_with_one() {
    let o = run(&["report", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: reading /definitely/missing.json"));

    let toy = data("toy.csv");
    // The toy inventory has two items per trait; auto selection wants ten.
    let o = run(&["assess", "--inventory", toy.to_str().unwrap(), "--backend", "mock:uniform", "--indexing", "indexed", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("2 items, 10 requested"), "{}", stderr(&o));

    let o = run(&["assess", "--inventory", toy.to_str().unwrap(), "--backend", "smoke:signals", "--indexing", "indexed"]);
    assert_eq!(o.status.code(), Some(1), "usage errors are not symmetry failures");
    assert!(stderr(&o).contains("unknown backend"));

    // No endpoint configured anywhere.
    let o = run(&["assess", "--inventory", toy.to_str().unwrap(), "--backend", "http", "--indexing", "indexed", "--template", "og-s-q-i-a-i", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("PSYPROBE_ENDPOINT"));
}
