use std::fs;
use std::path::Path;

use dsi::analysis::{AnalysisError, CheckStatus, LogPatterns, analyze};
use dsi::config::load_workspace;
use proptest::prelude::*;
use regex::Regex;

const CLEAN_LOG: &str = "2024-05-01T10:00:00.000Z I CONTROL  [main] start=1
2024-05-01T10:00:01.000Z I NETWORK  [listener] waiting for connections on port 27017
2024-05-01T10:00:02.000Z W STORAGE  [main] cache pressure is high
";

const RESULTS_OK: &str = r#"{"tests": [{"id": "t1", "status": "passed", "result": {"exit_code": 0}, "error": null}], "task_error": null}"#;

fn bundle_with(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (path, text) in files {
        let p = dir.path().join(path);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }
    dir
}

fn clean_bundle() -> Vec<(&'static str, &'static str)> {
    vec![
        ("hosts/mongod.0/logs/rs0_mongod_0.log", CLEAN_LOG),
        ("hosts/mongod.1/logs/rs0_mongod_1.log", CLEAN_LOG),
        ("configs/mongodb_setup.yml", "topology: []\n"),
        ("results.json", RESULTS_OK),
    ]
}

fn root_with(analysis_yml: Option<&str>) -> (tempfile::TempDir, dsi::ConfigRoot) {
    let ws = tempfile::tempdir().unwrap();
    if let Some(text) = analysis_yml {
        fs::write(ws.path().join("analysis.yml"), text).unwrap();
    }
    let root = load_workspace(ws.path()).unwrap();
    (ws, root)
}

fn run(files: &[(&str, &str)], analysis_yml: Option<&str>) -> dsi::analysis::AnalysisReport {
    let bundle = bundle_with(files);
    let (_ws, root) = root_with(analysis_yml);
    analyze(bundle.path(), &root).unwrap()
}

fn failing<'a>(report: &'a dsi::analysis::AnalysisReport, check: &str) -> Vec<&'a dsi::analysis::CheckResult> {
    report.failures().filter(|c| c.check == check).collect()
}

#[test]
fn clean_bundle_passes_every_check() {
    let report = run(&clean_bundle(), None);
    assert!(report.passed(), "{}", report.to_text());
    let checks: Vec<&str> = report.checks.iter().map(|c| c.check.as_str()).collect();
    assert!(checks.contains(&"log_scan") && checks.contains(&"core_files") && checks.contains(&"exit_codes"));
    assert!(report.checks.iter().all(|c| c.status == CheckStatus::Pass));
}

#[test]
fn error_line_fails_log_scan_with_that_line() {
    let bad = format!("{CLEAN_LOG}2024-05-01T10:00:03.000Z E  STORAGE  [conn7] WiredTiger error: write failed\n");
    let mut files = clean_bundle();
    files[1].1 = &bad;
    let report = run(&files, None);
    assert!(!report.passed());
    let fails = failing(&report, "log_scan");
    assert_eq!(fails.len(), 1);
    assert_eq!(fails[0].target, "hosts/mongod.1/logs/rs0_mongod_1.log");
    assert_eq!(
        fails[0].evidence,
        ["4: 2024-05-01T10:00:03.000Z E  STORAGE  [conn7] WiredTiger error: write failed"]
    );
    assert!(failing(&report, "core_files").is_empty() && failing(&report, "exit_codes").is_empty());
}

#[test]
fn allowlisted_error_line_passes() {
    let bad = format!("{CLEAN_LOG}2024-05-01T10:00:03.000Z E  NETWORK  [conn7] Error receiving request from client: ProtocolError\n");
    let mut files = clean_bundle();
    files[0].1 = &bad;
    assert!(!run(&files, None).passed());
    let report = run(&files, Some("log_scan:\n  allowlist:\n    - 'Error receiving request from client'\n"));
    assert!(report.passed(), "{}", report.to_text());
}

#[test]
fn core_file_fails_naming_its_path() {
    let mut files = clean_bundle();
    files.push(("hosts/mongod.1/core.1234", "\x7fELF"));
    let report = run(&files, None);
    let fails = failing(&report, "core_files");
    assert_eq!(fails.len(), 1);
    assert_eq!(fails[0].evidence, ["hosts/mongod.1/core.1234"]);
    assert!(failing(&report, "log_scan").is_empty());
}

#[test]
fn non_passing_test_fails_exit_code_check() {
    let mut files = clean_bundle();
    let results = r#"{"tests": [
        {"id": "t1", "status": "passed", "result": {"exit_code": 0}, "error": null},
        {"id": "t2", "status": "failed", "result": {"exit_code": 3}, "error": null},
        {"id": "t3", "status": "error", "result": null, "error": "timed out after 5.0s"}
    ], "task_error": null}"#;
    files[3].1 = results;
    let report = run(&files, None);
    let fails = failing(&report, "exit_codes");
    let summary: Vec<(&str, &str)> = fails.iter().map(|c| (c.target.as_str(), c.evidence[0].as_str())).collect();
    assert_eq!(
        summary,
        [("t2", "status failed, exit code 3"), ("t3", "status error: timed out after 5.0s")]
    );
}

#[test]
fn task_error_fails_exit_code_check() {
    let mut files = clean_bundle();
    files[3].1 = r#"{"tests": [], "task_error": "pre_task hook failed"}"#;
    let report = run(&files, None);
    assert_eq!(failing(&report, "exit_codes")[0].evidence, ["pre_task hook failed"]);
}

#[test]
fn evidence_is_capped_and_suppression_counted() {
    let log: String = (0..27).map(|i| format!("line {i} ERROR something\n")).collect();
    let report = run(&[("hosts/a.0/logs/x.log", &log)], Some("checks: [log_scan]\nevidence_cap: 20\n"));
    let fail = &failing(&report, "log_scan")[0];
    assert_eq!(fail.evidence.len(), 20);
    assert_eq!(fail.suppressed, 7);
    assert!(report.to_text().contains("... 7 more"));
}

#[test]
fn missing_inputs_are_skips_not_failures() {
    let manifest = r#"[{"name": "logs/*.log", "source": "mongod.2", "path": "hosts/mongod.2/logs/*.log",
        "size": 0, "sha256": "", "status": "missing", "detail": "cannot reach host mongod.2"}]"#;
    let report = run(&[("manifest.json", manifest)], None);
    assert!(report.passed());
    let skips: Vec<_> = report.checks.iter().filter(|c| c.status == CheckStatus::Skip).collect();
    assert!(skips.iter().any(|c| c.check == "log_scan" && c.target == "hosts/mongod.2/logs/*.log"));
    assert!(skips.iter().any(|c| c.check == "exit_codes"));
}

#[test]
fn unreadable_bundle_is_an_error() {
    let (_ws, root) = root_with(None);
    let err = analyze(Path::new("/nonexistent/bundle"), &root).unwrap_err();
    assert!(matches!(err, AnalysisError::Bundle { .. }));
}

#[test]
fn unknown_check_is_a_config_error() {
    let bundle = bundle_with(&clean_bundle());
    let (_ws, root) = root_with(Some("checks: [log_scan, vibes]\n"));
    assert!(matches!(analyze(bundle.path(), &root), Err(AnalysisError::Config(_))));
}

const FAIL: &[&str] = &[r"\bERROR\b", r"\s[EF]\s+[A-Z]+\s", r"^\s+at \S+\(.*\)$", "BEGIN BACKTRACE"];
const ALLOW: &[&str] = &["benign", r"ERROR \d+ retried", "conn[0-9]+"];
const WORDS: &[&str] = &[
    "ERROR", "E", "F", "I", "STORAGE", "NETWORK", "benign", "conn42", "retried", "7", "  at", "Foo.bar(x.java:1)",
    "BEGIN", "BACKTRACE", "ok", "errors", "",
];

fn line_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..8).prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(line_strategy(), 0..40)
}

fn owned(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Line-by-line evaluation with one compiled regex per pattern.
fn oracle(lines: &[String], fail: &[String], allow: &[String]) -> Vec<usize> {
    let fail: Vec<Regex> = fail.iter().map(|p| Regex::new(p).unwrap()).collect();
    let allow: Vec<Regex> = allow.iter().map(|p| Regex::new(p).unwrap()).collect();
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| fail.iter().any(|r| r.is_match(l)) && !allow.iter().any(|r| r.is_match(l)))
        .map(|(i, _)| i + 1)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scanner_matches_line_by_line_oracle(
        lines in corpus(),
        fail in prop::sample::subsequence(FAIL, 0..=FAIL.len()),
        allow in prop::sample::subsequence(ALLOW, 0..=ALLOW.len()),
    ) {
        let (fail, allow) = (owned(&fail), owned(&allow));
        let text = lines.join("\n");
        let patterns = LogPatterns::new(&fail, &allow).unwrap();
        let got: Vec<usize> = patterns.scan(&text).into_iter().map(|(n, _)| n).collect();
        prop_assert_eq!(got, oracle(&lines, &fail, &allow));
    }

    #[test]
    fn allowlist_entries_only_remove_failures(
        lines in corpus(),
        allow in prop::sample::subsequence(ALLOW, 0..ALLOW.len()),
        extra in prop::sample::select(ALLOW),
    ) {
        let fail = owned(FAIL);
        let before = LogPatterns::new(&fail, &owned(&allow)).unwrap();
        let mut more = owned(&allow);
        more.push(extra.to_string());
        let after = LogPatterns::new(&fail, &more).unwrap();
        let text = lines.join("\n");
        let (b, a) = (before.scan(&text), after.scan(&text));
        prop_assert!(a.iter().all(|hit| b.contains(hit)));
        if b.is_empty() {
            prop_assert!(a.is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_is_deterministic(logs in prop::collection::vec(corpus(), 1..4), core in any::<bool>()) {
        let mut files: Vec<(String, String)> = logs
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("hosts/mongod.{i}/logs/m.log"), l.join("\n")))
            .collect();
        if core {
            files.push(("hosts/mongod.0/core.77".into(), String::new()));
        }
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let bundle = bundle_with(&refs);
        let (_ws, root) = root_with(None);
        let first = analyze(bundle.path(), &root).unwrap().to_json();
        let (_ws2, root2) = root_with(None);
        let second = analyze(bundle.path(), &root2).unwrap().to_json();
        prop_assert_eq!(first, second);
    }
}
