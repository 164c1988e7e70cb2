//! Lifecycle hook actions: host commands, cluster restarts, file uploads.
//!
//! ```yaml
//! pre_test:
//!   - exec: rm -f logs/*.tmp
//!     on: mongod          # all | <category> | <category>.<index>
//!   - upload: {src: files/seed.js, dest: seed.js, on: workload_client.0}
//!   - restart: {clean_db: true}
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::ConfigValue;
use crate::channel::{ChannelError, CommandResult, ts_serde};
use crate::clock::{self, Timestamp};
use crate::config::{ConfigError, ConfigRoot};
use crate::parallel::fan_out;
use crate::provision::{FleetState, HostRecord};

pub const PHASES: [&str; 6] = [
    "pre_cluster_start",
    "pre_task",
    "pre_test",
    "post_test",
    "between_tests",
    "post_task",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    All,
    Category(String),
    Host(String),
}

impl Target {
    fn parse(text: &str) -> Target {
        match text {
            "all" => Target::All,
            t if t.rsplit_once('.').is_some_and(|(_, i)| i.parse::<usize>().is_ok()) => {
                Target::Host(t.to_owned())
            }
            t => Target::Category(t.to_owned()),
        }
    }

    pub fn select<'a>(&self, fleet: &'a FleetState) -> Vec<&'a HostRecord> {
        fleet
            .hosts
            .iter()
            .filter(|h| match self {
                Target::All => true,
                Target::Category(c) => &h.category == c,
                Target::Host(label) => &h.label() == label,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HookAction {
    Exec { command: String, on: Target },
    Restart { clean_db: bool },
    Upload { src: PathBuf, dest: String, on: Target },
}

impl HookAction {
    pub fn describe(&self) -> String {
        match self {
            HookAction::Exec { command, .. } => format!("exec {command}"),
            HookAction::Restart { clean_db } => format!("restart clean_db={clean_db}"),
            HookAction::Upload { src, dest, .. } => format!("upload {} -> {dest}", src.display()),
        }
    }
}

/// What one action did on one host (or, for restarts, on the cluster).
#[derive(Debug, Clone, Serialize)]
pub struct HookRecord {
    pub phase: String,
    pub action: String,
    pub host: Option<String>,
    #[serde(with = "ts_serde")]
    pub started_at: Timestamp,
    #[serde(with = "ts_serde")]
    pub ended_at: Timestamp,
    pub result: Option<CommandResult>,
    pub ok: bool,
}

#[derive(Debug, Error)]
pub enum HookError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{phase} hook `{action}` failed on {host}: exit {}: {}", result.exit_code, result.stderr.trim())]
    Command {
        phase: String,
        action: String,
        host: String,
        result: Box<CommandResult>,
    },
    #[error("{phase} hook `{action}` failed on {host}: {source}")]
    Channel {
        phase: String,
        action: String,
        host: String,
        #[source]
        source: ChannelError,
    },
    #[error("{phase} hook `{action}` failed: {message}")]
    Action {
        phase: String,
        action: String,
        message: String,
    },
    #[error("{phase} hook `{action}` selects no hosts")]
    NoHosts { phase: String, action: String },
}

fn bad(path: &str, expected: &'static str, found: &ConfigValue) -> ConfigError {
    ConfigError::Type {
        path: path.into(),
        expected,
        found: found.kind(),
    }
}

fn target(entry: &ConfigValue, path: &str) -> Result<Target, ConfigError> {
    match entry.get("on") {
        None => Ok(Target::All),
        Some(v) => v
            .as_str()
            .map(Target::parse)
            .ok_or_else(|| bad(&format!("{path}.on"), "a host selector", v)),
    }
}

/// Parses the action list configured at `path`.
pub fn actions(root: &ConfigRoot, path: &str) -> Result<Vec<HookAction>, ConfigError> {
    let value = match root.lookup(path)? {
        None | Some(ConfigValue::Null) => return Ok(Vec::new()),
        Some(v) => v,
    };
    parse_actions(&value, path)
}

pub fn parse_actions(value: &ConfigValue, path: &str) -> Result<Vec<HookAction>, ConfigError> {
    let list = value.as_seq().ok_or_else(|| bad(path, "a list of hook actions", value))?;
    list.iter()
        .enumerate()
        .map(|(i, entry)| {
            let p = format!("{path}.{i}");
            if let Some(command) = entry.as_str() {
                return Ok(HookAction::Exec {
                    command: command.to_owned(),
                    on: Target::All,
                });
            }
            if let Some(command) = entry.get("exec") {
                let command = command
                    .scalar_text()
                    .ok_or_else(|| bad(&format!("{p}.exec"), "a command string", command))?;
                return Ok(HookAction::Exec {
                    command,
                    on: target(entry, &p)?,
                });
            }
            if let Some(restart) = entry.get("restart") {
                let clean_db = match restart {
                    ConfigValue::Null => false,
                    ConfigValue::Map(m) => match m.get("clean_db") {
                        None => false,
                        Some(v) => v
                            .as_bool()
                            .ok_or_else(|| bad(&format!("{p}.restart.clean_db"), "a boolean", v))?,
                    },
                    other => return Err(bad(&format!("{p}.restart"), "a mapping", other)),
                };
                return Ok(HookAction::Restart { clean_db });
            }
            if let Some(upload) = entry.get("upload") {
                let field = |k: &str| {
                    upload
                        .get(k)
                        .and_then(ConfigValue::scalar_text)
                        .ok_or_else(|| ConfigError::MissingKey {
                            path: format!("{p}.upload.{k}"),
                        })
                };
                return Ok(HookAction::Upload {
                    src: PathBuf::from(field("src")?),
                    dest: field("dest")?,
                    on: target(upload, &format!("{p}.upload"))?,
                });
            }
            Err(bad(&p, "an exec, restart or upload action", entry))
        })
        .collect()
}

/// Runs `actions` in order. Host actions fan out across selected hosts; the
/// first failing action stops the hook.
pub fn run_hook(
    phase: &str,
    actions: &[HookAction],
    fleet: &FleetState,
    workdir: &Path,
    parallelism: usize,
    restart: &mut dyn FnMut(bool) -> Result<(), String>,
) -> Result<Vec<HookRecord>, (Vec<HookRecord>, HookError)> {
    let mut records = Vec::new();
    for action in actions {
        let description = action.describe();
        match action {
            HookAction::Restart { clean_db } => {
                let started_at = clock::now();
                let outcome = restart(*clean_db);
                records.push(HookRecord {
                    phase: phase.into(),
                    action: description.clone(),
                    host: None,
                    started_at,
                    ended_at: clock::now(),
                    result: None,
                    ok: outcome.is_ok(),
                });
                if let Err(message) = outcome {
                    let err = HookError::Action {
                        phase: phase.into(),
                        action: description,
                        message,
                    };
                    return Err((records, err));
                }
            }
            HookAction::Exec { on, .. } | HookAction::Upload { on, .. } => {
                let hosts = on.select(fleet);
                if hosts.is_empty() {
                    let err = HookError::NoHosts {
                        phase: phase.into(),
                        action: description,
                    };
                    return Err((records, err));
                }
                let outcomes = fan_out(&hosts, parallelism, |host| {
                    host_action(phase, action, &description, host, workdir)
                });
                let mut failure = None;
                for (record, err) in outcomes {
                    records.push(record);
                    if failure.is_none() {
                        failure = err;
                    }
                }
                if let Some(err) = failure {
                    return Err((records, err));
                }
            }
        }
    }
    Ok(records)
}

fn host_action(
    phase: &str,
    action: &HookAction,
    description: &str,
    host: &HostRecord,
    workdir: &Path,
) -> (HookRecord, Option<HookError>) {
    let started_at = clock::now();
    let channel_error = |source| HookError::Channel {
        phase: phase.into(),
        action: description.into(),
        host: host.label(),
        source,
    };
    let (result, err) = match action {
        HookAction::Exec { command, .. } => match host.channel.exec(command) {
            Ok(r) if r.success() => (Some(r), None),
            Ok(r) => {
                let err = HookError::Command {
                    phase: phase.into(),
                    action: description.into(),
                    host: host.label(),
                    result: Box::new(r.clone()),
                };
                (Some(r), Some(err))
            }
            Err(e) => (None, Some(channel_error(e))),
        },
        HookAction::Upload { src, dest, .. } => {
            let src = if src.is_absolute() { src.clone() } else { workdir.join(src) };
            match host.channel.upload(&src, dest) {
                Ok(()) => (None, None),
                Err(e) => (None, Some(channel_error(e))),
            }
        }
        HookAction::Restart { .. } => unreachable!("restart is not a host action"),
    };
    let record = HookRecord {
        phase: phase.into(),
        action: description.into(),
        host: Some(host.label()),
        started_at,
        ended_at: clock::now(),
        result,
        ok: err.is_none(),
    };
    (record, err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_action_forms() {
        let yaml = "
- echo plain
- {exec: 'touch x', on: mongod}
- {exec: 'touch y', on: workload_client.0}
- {restart: {clean_db: true}}
- restart: ~
- {upload: {src: a.txt, dest: b.txt, on: all}}
";
        let value = ConfigValue::from_yaml(serde_yaml::from_str(yaml).unwrap()).unwrap();
        let parsed = parse_actions(&value, "test_control.pre_test").unwrap();
        assert_eq!(
            parsed,
            vec![
                HookAction::Exec { command: "echo plain".into(), on: Target::All },
                HookAction::Exec { command: "touch x".into(), on: Target::Category("mongod".into()) },
                HookAction::Exec { command: "touch y".into(), on: Target::Host("workload_client.0".into()) },
                HookAction::Restart { clean_db: true },
                HookAction::Restart { clean_db: false },
                HookAction::Upload { src: "a.txt".into(), dest: "b.txt".into(), on: Target::All },
            ]
        );
    }

    #[test]
    fn unknown_action_is_a_config_error() {
        let value = ConfigValue::from_yaml(serde_yaml::from_str("- {reboot: now}").unwrap()).unwrap();
        assert!(parse_actions(&value, "x").is_err());
    }
}
