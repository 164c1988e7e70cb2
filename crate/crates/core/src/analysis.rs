//! Static pass/fail checks over one run's artifact bundle: error lines in
//! server logs, core files, and test exit status. Nothing here reads earlier
//! runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigRoot};
use crate::control::{self, EntryStatus, MANIFEST_FILE, ManifestEntry};

pub const MODULE: &str = "analysis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

impl CheckStatus {
    fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub target: String,
    pub status: CheckStatus,
    pub evidence: Vec<String>,
    /// Evidence items left out because of the cap.
    pub suppressed: usize,
}

impl CheckResult {
    fn new(check: &str, target: impl Into<String>, status: CheckStatus, evidence: Vec<String>) -> Self {
        CheckResult {
            check: check.into(),
            target: target.into(),
            status,
            evidence,
            suppressed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// `pass` or `fail`; skipped checks do not fail a run.
    pub overall: CheckStatus,
    pub checks: Vec<CheckResult>,
}

impl AnalysisReport {
    pub fn passed(&self) -> bool {
        self.overall == CheckStatus::Pass
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("overall: {}\n", self.overall.label().to_lowercase());
        for c in &self.checks {
            let _ = writeln!(out, "{} {} {}", c.status.label(), c.check, c.target);
            for e in &c.evidence {
                let _ = writeln!(out, "    {e}");
            }
            if c.suppressed > 0 {
                let _ = writeln!(out, "    ... {} more", c.suppressed);
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read artifact bundle {}: {message}", path.display())]
    Bundle { path: PathBuf, message: String },
}

/// Fail patterns minus allowlist, matched line by line.
#[derive(Debug, Clone)]
pub struct LogPatterns {
    fail: RegexSet,
    allow: RegexSet,
}

impl LogPatterns {
    pub fn new(fail: &[String], allow: &[String]) -> Result<Self, regex::Error> {
        Ok(LogPatterns {
            fail: RegexSet::new(fail)?,
            allow: RegexSet::new(allow)?,
        })
    }

    pub fn is_failing(&self, line: &str) -> bool {
        self.fail.is_match(line) && !self.allow.is_match(line)
    }

    /// Failing lines with their 1-based line numbers.
    pub fn scan<'t>(&self, text: &'t str) -> Vec<(usize, &'t str)> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| self.is_failing(l))
            .map(|(i, l)| (i + 1, l))
            .collect()
    }
}

struct Settings {
    checks: Vec<String>,
    log_files: Vec<String>,
    patterns: LogPatterns,
    core_pattern: Regex,
    cap: usize,
    results_file: String,
}

impl Settings {
    fn from_root(root: &ConfigRoot) -> Result<Self, ConfigError> {
        let p = |k: &str| format!("{MODULE}.{k}");
        let checks = root.strings(&p("checks"))?;
        if let Some(unknown) = checks.iter().find(|c| !["log_scan", "core_files", "exit_codes"].contains(&c.as_str())) {
            return Err(ConfigError::Invalid(format!("{}: unknown check `{unknown}`", p("checks"))));
        }
        let patterns = LogPatterns::new(
            &root.strings(&p("log_scan.fail_patterns"))?,
            &root.strings(&p("log_scan.allowlist"))?,
        )
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p("log_scan"))))?;
        let core = root.string(&p("core_files.pattern"))?;
        Ok(Settings {
            checks,
            log_files: root.strings(&p("log_scan.files"))?,
            patterns,
            core_pattern: Regex::new(&core)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p("core_files.pattern"))))?,
            cap: root.integer(&p("evidence_cap"))?.max(1) as usize,
            results_file: root.string("runtime.results_file")?,
        })
    }
}

fn bundle_error(path: &Path, e: impl ToString) -> AnalysisError {
    AnalysisError::Bundle {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn rel(bundle: &Path, file: &Path) -> String {
    file.strip_prefix(bundle)
        .unwrap_or(file)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn manifest(bundle: &Path) -> Vec<ManifestEntry> {
    fs::read(bundle.join(MANIFEST_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default()
}

fn log_scan(bundle: &Path, settings: &Settings) -> Result<Vec<CheckResult>, AnalysisError> {
    const CHECK: &str = "log_scan";
    let mut files = Vec::new();
    let mut globs = Vec::new();
    for pattern in &settings.log_files {
        let full = format!("{}/{}", glob::Pattern::escape(&bundle.to_string_lossy()), pattern);
        for path in glob::glob(&full).map_err(|e| bundle_error(bundle, e))? {
            let path = path.map_err(|e| bundle_error(bundle, e))?;
            if path.is_file() {
                files.push(path);
            }
        }
        globs.push(glob::Pattern::new(pattern).map_err(|e| bundle_error(bundle, e))?);
    }
    files.sort();
    files.dedup();
    let mut results = Vec::new();
    for file in files {
        let bytes = fs::read(&file).map_err(|e| bundle_error(&file, e))?;
        let text = String::from_utf8_lossy(&bytes);
        let hits = settings.patterns.scan(&text);
        let target = rel(bundle, &file);
        if hits.is_empty() {
            results.push(CheckResult::new(CHECK, target, CheckStatus::Pass, Vec::new()));
        } else {
            let evidence = hits.iter().take(settings.cap).map(|(n, l)| format!("{n}: {l}")).collect();
            let mut r = CheckResult::new(CHECK, target, CheckStatus::Fail, evidence);
            r.suppressed = hits.len().saturating_sub(settings.cap);
            results.push(r);
        }
    }
    // Files the collector could not fetch.
    for e in manifest(bundle).iter().filter(|e| e.status == EntryStatus::Missing) {
        let logical = format!("hosts/{}/{}", e.source, e.name);
        if globs.iter().any(|g| g.matches(&e.path) || g.matches(&logical)) {
            let detail = e.detail.clone().unwrap_or_else(|| "not collected".into());
            results.push(CheckResult::new(CHECK, e.path.clone(), CheckStatus::Skip, vec![detail]));
        }
    }
    if results.is_empty() {
        results.push(CheckResult::new(
            CHECK,
            settings.log_files.join(" "),
            CheckStatus::Skip,
            vec!["no matching log files".into()],
        ));
    }
    Ok(results)
}

fn core_files(bundle: &Path, settings: &Settings) -> Result<Vec<CheckResult>, AnalysisError> {
    let files = control::files_under(bundle).map_err(|e| bundle_error(bundle, e))?;
    let found: Vec<String> = files
        .iter()
        .filter(|f| {
            f.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| settings.core_pattern.is_match(n))
        })
        .map(|f| rel(bundle, f))
        .collect();
    let status = if found.is_empty() { CheckStatus::Pass } else { CheckStatus::Fail };
    let mut r = CheckResult::new("core_files", "bundle", status, found.iter().take(settings.cap).cloned().collect());
    r.suppressed = found.len().saturating_sub(settings.cap);
    Ok(vec![r])
}

#[derive(Deserialize)]
struct ResultsDoc {
    tests: Vec<ResultsTest>,
    task_error: Option<String>,
}

#[derive(Deserialize)]
struct ResultsTest {
    id: String,
    status: control::TestStatus,
    result: Option<ResultsCommand>,
    error: Option<String>,
}

#[derive(Deserialize)]
struct ResultsCommand {
    exit_code: i32,
}

fn exit_codes(bundle: &Path, settings: &Settings) -> Result<Vec<CheckResult>, AnalysisError> {
    const CHECK: &str = "exit_codes";
    let file = bundle.join(&settings.results_file);
    let Ok(bytes) = fs::read(&file) else {
        return Ok(vec![CheckResult::new(
            CHECK,
            settings.results_file.clone(),
            CheckStatus::Skip,
            vec!["results document not in bundle".into()],
        )]);
    };
    let doc: ResultsDoc = serde_json::from_slice(&bytes).map_err(|e| bundle_error(&file, e))?;
    let mut results = Vec::new();
    results.push(match doc.task_error {
        None => CheckResult::new(CHECK, "task", CheckStatus::Pass, Vec::new()),
        Some(e) => CheckResult::new(CHECK, "task", CheckStatus::Fail, vec![e]),
    });
    for t in doc.tests {
        let r = if t.status == control::TestStatus::Passed {
            CheckResult::new(CHECK, t.id, CheckStatus::Pass, Vec::new())
        } else {
            let mut evidence = format!("status {}", serde_json::to_value(t.status).unwrap().as_str().unwrap());
            if let Some(r) = t.result {
                let _ = write!(evidence, ", exit code {}", r.exit_code);
            }
            if let Some(e) = t.error {
                let _ = write!(evidence, ": {e}");
            }
            CheckResult::new(CHECK, t.id, CheckStatus::Fail, vec![evidence])
        };
        results.push(r);
    }
    Ok(results)
}

/// Runs the configured checks over an unpacked bundle directory.
pub fn analyze(bundle: &Path, root: &ConfigRoot) -> Result<AnalysisReport, AnalysisError> {
    if !bundle.is_dir() {
        return Err(bundle_error(bundle, "not a directory"));
    }
    let settings = Settings::from_root(root)?;
    let mut checks = Vec::new();
    for check in &settings.checks {
        checks.extend(match check.as_str() {
            "log_scan" => log_scan(bundle, &settings)?,
            "core_files" => core_files(bundle, &settings)?,
            _ => exit_codes(bundle, &settings)?,
        });
    }
    let failed = checks.iter().any(|c| c.status == CheckStatus::Fail);
    Ok(AnalysisReport {
        overall: if failed { CheckStatus::Fail } else { CheckStatus::Pass },
        checks,
    })
}

/// Analyzes the workspace's archive, writes both report files into the
/// workspace, and adds them (with manifest entries) to the archive.
pub fn analyze_workspace(root: &ConfigRoot) -> Result<AnalysisReport, AnalysisError> {
    let workdir = root
        .dir()
        .ok_or_else(|| ConfigError::Invalid("analysis needs a workspace directory".into()))?;
    let archive = workdir.join(root.string("runtime.archive_name")?);
    if !archive.is_file() {
        return Err(bundle_error(&archive, "archive not found; run test_control first"));
    }
    let unpacked = tempfile::tempdir().map_err(|e| bundle_error(&archive, e))?;
    control::unpack(&archive, unpacked.path()).map_err(|e| bundle_error(&archive, e))?;
    let report = analyze(unpacked.path(), root)?;

    let json_name = root.string(&format!("{MODULE}.report_json"))?;
    let text_name = root.string(&format!("{MODULE}.report_text"))?;
    let outputs = [(json_name, report.to_json()), (text_name, report.to_text())];
    let staging = workdir.join(root.string("runtime.artifact_dir")?);
    let mut entries: Vec<ManifestEntry> = manifest(unpacked.path())
        .into_iter()
        .filter(|e| !outputs.iter().any(|(name, _)| &e.path == name))
        .collect();
    for (name, text) in &outputs {
        let io = |p: &Path| {
            let p = p.to_owned();
            move |e| AnalysisError::Config(ConfigError::Io { path: p, source: e })
        };
        fs::write(workdir.join(name), text).map_err(io(&workdir.join(name)))?;
        let in_bundle = unpacked.path().join(name);
        fs::write(&in_bundle, text).map_err(io(&in_bundle))?;
        entries.push(control::manifest_entry(unpacked.path(), &in_bundle, name).map_err(io(&in_bundle))?);
        if staging.is_dir() {
            fs::write(staging.join(name), text).map_err(io(&staging))?;
        }
    }
    control::write_manifest(unpacked.path(), &mut entries)?;
    if staging.is_dir() {
        let _ = fs::copy(unpacked.path().join(MANIFEST_FILE), staging.join(MANIFEST_FILE));
    }
    control::pack(unpacked.path(), &archive).map_err(|e| bundle_error(&archive, e))?;
    Ok(report)
}
