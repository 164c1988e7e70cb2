//! Runs the benchmark list with lifecycle hooks and gathers the run's
//! artifacts into one archive.

mod archive;
mod collect;

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ConfigValue;
use crate::channel::{ChannelError, CommandResult, seconds};
use crate::clock::{self, Timestamp};
use crate::cluster::{self, SetupOut};
use crate::config::{ConfigError, ConfigRoot};
use crate::hooks::{self, HookAction, HookError, HookRecord};
use crate::provision::{FleetState, HostRecord};

pub use archive::{files_under, pack, unpack};
pub use collect::{ArtifactBundle, EntryStatus, MANIFEST_FILE, ManifestEntry, collect_artifacts, write_manifest};

/// Manifest entry for a file the control host adds to a bundle.
pub fn manifest_entry(bundle: &Path, file: &Path, name: &str) -> std::io::Result<ManifestEntry> {
    collect::entry(bundle, file, name, "control")
}

pub const MODULE: &str = "test_control";

#[derive(Debug, Clone, PartialEq)]
pub struct TestDefinition {
    pub id: String,
    pub test_type: String,
    pub cmd: String,
    pub config_filename: Option<String>,
    pub workload_config: Option<String>,
    pub pre_test: Vec<HookAction>,
    pub post_test: Vec<HookAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStatus {
    Passed,
    Failed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub id: String,
    #[serde(rename = "type")]
    pub test_type: String,
    pub host: Option<String>,
    #[serde(with = "crate::channel::ts_serde")]
    pub started_at: Timestamp,
    #[serde(with = "crate::channel::ts_serde")]
    pub ended_at: Timestamp,
    pub result: Option<CommandResult>,
    pub metrics: Vec<MetricSample>,
    pub status: TestStatus,
    pub error: Option<String>,
}

/// One phase of the task as it happened. Phases with no actions are still
/// recorded so the order of the run is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub phase: String,
    pub test: Option<String>,
    #[serde(with = "crate::channel::ts_serde")]
    pub started_at: Timestamp,
    #[serde(with = "crate::channel::ts_serde")]
    pub ended_at: Timestamp,
    pub ok: bool,
}

/// Everything `run_tests` did; serialized as the results document.
#[derive(Debug, Clone, Serialize)]
pub struct TaskReport {
    #[serde(with = "crate::channel::ts_serde")]
    pub started_at: Timestamp,
    #[serde(with = "crate::channel::ts_serde")]
    pub ended_at: Timestamp,
    pub tests: Vec<TestOutcome>,
    pub timeline: Vec<TimelineEntry>,
    pub hooks: Vec<HookRecord>,
    pub task_error: Option<String>,
}

impl TaskReport {
    /// A task that never started, for bundling after a validation failure.
    pub fn aborted(message: String) -> Self {
        let now = clock::now();
        TaskReport {
            started_at: now,
            ended_at: now,
            tests: Vec::new(),
            timeline: Vec::new(),
            hooks: Vec::new(),
            task_error: Some(message),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.task_error.is_none() && self.tests.iter().all(|t| t.status == TestStatus::Passed)
    }

    /// Stops at the first entry for `phase` (and `test`, when given).
    pub fn phase(&self, phase: &str, test: Option<&str>) -> Option<&TimelineEntry> {
        self.timeline
            .iter()
            .find(|e| e.phase == phase && (test.is_none() || e.test.as_deref() == test))
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("test list: {0}")]
    Validation(String),
}

fn type_error(path: &str, expected: &'static str, found: &ConfigValue) -> ConfigError {
    ConfigError::Type {
        path: path.into(),
        expected,
        found: found.kind(),
    }
}

/// Parses and validates `test_control.run`.
pub fn test_list(root: &ConfigRoot) -> Result<Vec<TestDefinition>, ControlError> {
    let path = format!("{MODULE}.run");
    let run = root.value(&path)?;
    let entries = run.as_seq().ok_or_else(|| type_error(&path, "a sequence", &run))?;
    if entries.is_empty() {
        return Err(ControlError::Validation("the run list is empty".into()));
    }
    let mut tests: Vec<TestDefinition> = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let p = format!("{path}.{i}");
        let field = |k: &str| -> Result<Option<String>, ConfigError> {
            match entry.get(k) {
                None | Some(ConfigValue::Null) => Ok(None),
                Some(v) => v
                    .scalar_text()
                    .map(Some)
                    .ok_or_else(|| type_error(&format!("{p}.{k}"), "a scalar", v)),
            }
        };
        let need = |k: &str| -> Result<String, ConfigError> {
            field(k)?.ok_or_else(|| ConfigError::MissingKey {
                path: format!("{p}.{k}"),
            })
        };
        let per_test = |k: &str| match entry.get(k) {
            None | Some(ConfigValue::Null) => Ok(Vec::new()),
            Some(v) => hooks::parse_actions(v, &format!("{p}.{k}")),
        };
        let test = TestDefinition {
            id: need("id")?,
            test_type: need("type")?,
            cmd: need("cmd")?,
            config_filename: field("config_filename")?,
            workload_config: field("workload_config")?,
            pre_test: per_test("pre_test")?,
            post_test: per_test("post_test")?,
        };
        if tests.iter().any(|t| t.id == test.id) {
            return Err(ControlError::Validation(format!("duplicate test id `{}`", test.id)));
        }
        if test.workload_config.is_some() && test.config_filename.is_none() {
            return Err(ControlError::Validation(format!(
                "test `{}` has a workload_config but no config_filename",
                test.id
            )));
        }
        if test.id.is_empty() || test.id.contains(['/', '\\']) || test.id.starts_with('.') {
            return Err(ControlError::Validation(format!("test id `{}` is not a plain name", test.id)));
        }
        tests.push(test);
    }
    Ok(tests)
}

#[derive(Debug, Clone)]
struct MetricPattern {
    name: String,
    pattern: Regex,
    unit: String,
}

fn metric_patterns(root: &ConfigRoot, test_type: &str) -> Result<Vec<MetricPattern>, ConfigError> {
    let path = format!("{MODULE}.metrics.{test_type}");
    let Some(value) = root.lookup(&path)? else {
        return Ok(Vec::new());
    };
    let list = value.as_seq().ok_or_else(|| type_error(&path, "a list of metric patterns", &value))?;
    list.iter()
        .enumerate()
        .map(|(i, m)| {
            let p = format!("{path}.{i}");
            let text = |k: &str| {
                m.get(k).and_then(ConfigValue::scalar_text).ok_or_else(|| ConfigError::MissingKey {
                    path: format!("{p}.{k}"),
                })
            };
            let source = text("pattern")?;
            let pattern = Regex::new(&source)
                .map_err(|e| ConfigError::Invalid(format!("{p}.pattern: {e}")))?;
            if pattern.captures_len() != 2 {
                return Err(ConfigError::Invalid(format!(
                    "{p}.pattern must have exactly one capture group"
                )));
            }
            Ok(MetricPattern {
                name: text("name")?,
                pattern,
                unit: m.get("unit").and_then(ConfigValue::scalar_text).unwrap_or_default(),
            })
        })
        .collect()
}

/// The last match of each pattern in `output` that parses as a number.
fn parse_metrics(output: &str, patterns: &[MetricPattern]) -> Vec<MetricSample> {
    patterns
        .iter()
        .filter_map(|m| {
            let value = m
                .pattern
                .captures_iter(output)
                .filter_map(|c| c.get(1)?.as_str().trim().parse::<f64>().ok())
                .last()?;
            Some(MetricSample {
                name: m.name.clone(),
                value,
                unit: m.unit.clone(),
            })
        })
        .collect()
}

struct Task<'a> {
    root: &'a ConfigRoot,
    fleet: &'a FleetState,
    workdir: PathBuf,
    parallelism: usize,
    report: TaskReport,
}

impl Task<'_> {
    fn hook(&mut self, phase: &str, test: Option<&str>, actions: &[HookAction]) -> Result<(), String> {
        let started_at = clock::now();
        let (root, fleet) = (self.root, self.fleet);
        let mut restart = |clean_db: bool| restart_cluster(root, fleet, clean_db);
        let outcome = hooks::run_hook(phase, actions, fleet, &self.workdir, self.parallelism, &mut restart);
        let (records, err) = match outcome {
            Ok(records) => (records, None),
            Err((records, e)) => (records, Some(e)),
        };
        self.report.hooks.extend(records);
        self.report.timeline.push(TimelineEntry {
            phase: phase.into(),
            test: test.map(str::to_owned),
            started_at,
            ended_at: clock::now(),
            ok: err.is_none(),
        });
        match err {
            None => Ok(()),
            Some(e) => Err(describe_hook_error(e)),
        }
    }

    fn run_one(&mut self, test: &TestDefinition, clients: &[HostRecord], timeout: std::time::Duration) -> TestOutcome {
        let patterns = metric_patterns(self.root, &test.test_type);
        let runner = &clients[0];
        let started_at = clock::now();
        let mut outcome = TestOutcome {
            id: test.id.clone(),
            test_type: test.test_type.clone(),
            host: Some(runner.label()),
            started_at,
            ended_at: started_at,
            result: None,
            metrics: Vec::new(),
            status: TestStatus::Error,
            error: None,
        };
        let patterns = match patterns {
            Ok(p) => p,
            Err(e) => {
                outcome.error = Some(e.to_string());
                outcome.ended_at = clock::now();
                return outcome;
            }
        };
        match runner.channel.run_shell(&test.cmd, timeout) {
            Ok(result) => {
                outcome.metrics = parse_metrics(&result.stdout, &patterns);
                outcome.status = if result.success() { TestStatus::Passed } else { TestStatus::Failed };
                outcome.result = Some(result);
            }
            Err(ChannelError::Timeout { partial, .. }) => {
                outcome.error = Some(format!("timed out after {:.1}s", partial.duration));
                outcome.result = Some(*partial);
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        outcome.ended_at = clock::now();
        outcome
    }

    /// Writes the test's workload config to every client host.
    fn extract(&mut self, test: &TestDefinition, index: usize, clients: &[HostRecord]) -> Result<(), String> {
        let (Some(file), Some(_)) = (&test.config_filename, &test.workload_config) else {
            return Ok(());
        };
        let started_at = clock::now();
        // Read through the root so references inside the block are resolved.
        let text = self
            .root
            .text(&format!("{MODULE}.run.{index}.workload_config"))
            .map_err(|e| e.to_string());
        let result = text.and_then(|text| {
            clients
                .iter()
                .try_for_each(|h| h.channel.put_bytes(text.as_bytes(), file).map_err(|e| e.to_string()))
        });
        self.report.timeline.push(TimelineEntry {
            phase: "extract".into(),
            test: Some(test.id.clone()),
            started_at,
            ended_at: clock::now(),
            ok: result.is_ok(),
        });
        result
    }
}

fn describe_hook_error(e: HookError) -> String {
    match &e {
        HookError::Command { result, .. } if !result.stdout.trim().is_empty() && result.stderr.trim().is_empty() => {
            format!("{e} {}", result.stdout.trim())
        }
        _ => e.to_string(),
    }
}

/// A restart action with no deployed cluster (skipped setup) does nothing.
fn restart_cluster(root: &ConfigRoot, fleet: &FleetState, clean_db: bool) -> Result<(), String> {
    let deployed = root
        .dir()
        .map(SetupOut::read)
        .transpose()
        .map_err(|e| e.to_string())?
        .flatten()
        .is_some_and(|s| s.stopped_at.is_none());
    if !deployed {
        log::warn!("no deployed cluster in this workspace; restart skipped");
        return Ok(());
    }
    cluster::restart(root, fleet, clean_db).map(|_| ()).map_err(|e| e.to_string())
}

/// Runs pre_task, every test with its hooks and extraction, between-test
/// actions, and post_task. Test failures are recorded and later tests still
/// run; a hook failure ends the task early and is reported in
/// `task_error`. Validation problems are returned as errors before anything
/// runs.
pub fn run_tests(root: &ConfigRoot, fleet: &FleetState) -> Result<TaskReport, ControlError> {
    let tests = test_list(root)?;
    let client_category = root.string(&format!("{MODULE}.client_category"))?;
    let clients: Vec<HostRecord> = fleet.category(&client_category).cloned().collect();
    if clients.is_empty() {
        return Err(ControlError::Validation(format!(
            "no `{client_category}` hosts to run tests on"
        )));
    }
    let timeout = seconds(root.float(&format!("{MODULE}.test_timeout_seconds"))?);
    let phase = |name: &str| hooks::actions(root, &format!("{MODULE}.{name}"));
    let (pre_task, pre_test, post_test, between, post_task) = (
        phase("pre_task")?,
        phase("pre_test")?,
        phase("post_test")?,
        phase("between_tests")?,
        phase("post_task")?,
    );
    let workdir = root
        .dir()
        .map(Path::to_path_buf)
        .ok_or_else(|| ConfigError::Invalid("test control needs a workspace directory".into()))?;
    let started_at = clock::now();
    let mut task = Task {
        root,
        fleet,
        workdir,
        parallelism: root.integer("runtime.parallelism")?.max(1) as usize,
        report: TaskReport {
            started_at,
            ended_at: started_at,
            tests: Vec::new(),
            timeline: Vec::new(),
            hooks: Vec::new(),
            task_error: None,
        },
    };

    let outcome = (|| -> Result<(), String> {
        task.hook("pre_task", None, &pre_task)?;
        for (i, test) in tests.iter().enumerate() {
            let id = Some(test.id.as_str());
            task.hook("pre_test", id, &pre_test)?;
            if !test.pre_test.is_empty() {
                task.hook("pre_test", id, &test.pre_test)?;
            }
            let extracted = task.extract(test, i, &clients);
            let result = match extracted {
                Ok(()) => task.run_one(test, &clients, timeout),
                Err(message) => {
                    let now = clock::now();
                    TestOutcome {
                        id: test.id.clone(),
                        test_type: test.test_type.clone(),
                        host: None,
                        started_at: now,
                        ended_at: now,
                        result: None,
                        metrics: Vec::new(),
                        status: TestStatus::Error,
                        error: Some(format!("workload config extraction failed: {message}")),
                    }
                }
            };
            log::info!("test {} {:?}", test.id, result.status);
            task.report.timeline.push(TimelineEntry {
                phase: "test".into(),
                test: Some(test.id.clone()),
                started_at: result.started_at,
                ended_at: result.ended_at,
                ok: result.status == TestStatus::Passed,
            });
            task.report.tests.push(result);
            if !test.post_test.is_empty() {
                task.hook("post_test", id, &test.post_test)?;
            }
            task.hook("post_test", id, &post_test)?;
            if i + 1 < tests.len() {
                task.hook("between_tests", id, &between)?;
            }
        }
        Ok(())
    })();
    if let Err(message) = outcome {
        log::error!("task aborted: {message}");
        task.report.task_error = Some(message);
    }
    // post_task always runs so hosts get cleaned up after an aborted task.
    if let Err(message) = task.hook("post_task", None, &post_task) {
        task.report.task_error.get_or_insert(message);
    }
    task.report.ended_at = clock::now();
    Ok(task.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_numeric_match_wins() {
        let patterns = vec![MetricPattern {
            name: "throughput".into(),
            pattern: Regex::new(r"ops=([0-9.]+|x)").unwrap(),
            unit: "ops/sec".into(),
        }];
        let samples = parse_metrics("ops=1\nops=2.5\nops=x\n", &patterns);
        assert_eq!(samples, vec![MetricSample { name: "throughput".into(), value: 2.5, unit: "ops/sec".into() }]);
        assert!(parse_metrics("nothing", &patterns).is_empty());
    }
}
