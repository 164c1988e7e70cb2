//! Installs benchmark dependencies on workload-client hosts before the
//! system under test is deployed.

use indexmap::IndexMap;
use thiserror::Error;

use crate::ConfigValue;
use crate::channel::{ChannelError, CommandResult};
use crate::clock;
use crate::config::{ConfigError, ConfigRoot, OutDocument, write_out};
use crate::parallel::fan_out;
use crate::provision::{FleetState, HostRecord};

pub const MODULE: &str = "workload_setup";

#[derive(Debug, Clone)]
pub struct SetupCommand {
    pub host: String,
    pub test_type: String,
    pub result: CommandResult,
}

#[derive(Debug, Clone, Default)]
pub struct SetupReport {
    pub commands: Vec<SetupCommand>,
    /// Types in the run list with no setup entry.
    pub without_setup: Vec<String>,
    /// Setup entries no test uses.
    pub unused: Vec<String>,
}

#[derive(Debug, Error)]
pub enum WorkloadSetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workload setup failed on {host}: `{command}` exited {exit_code}: {stderr}")]
    Command {
        host: String,
        command: String,
        exit_code: i32,
        stderr: String,
        report: Box<SetupReport>,
    },
    #[error("workload setup failed on {host}: {source}")]
    Channel {
        host: String,
        #[source]
        source: ChannelError,
        report: Box<SetupReport>,
    },
}

/// Distinct test types of `test_control.run`, in first-use order.
pub fn run_types(root: &ConfigRoot) -> Result<Vec<String>, ConfigError> {
    let run = root.value("test_control.run")?;
    let tests = run.as_seq().ok_or_else(|| ConfigError::Type {
        path: "test_control.run".into(),
        expected: "a sequence",
        found: run.kind(),
    })?;
    let mut types: Vec<String> = Vec::new();
    for (i, test) in tests.iter().enumerate() {
        let t = test
            .get("type")
            .and_then(ConfigValue::scalar_text)
            .ok_or_else(|| ConfigError::MissingKey {
                path: format!("test_control.run.{i}.type"),
            })?;
        if !types.contains(&t) {
            types.push(t);
        }
    }
    Ok(types)
}

fn setup_map(root: &ConfigRoot) -> Result<IndexMap<String, Vec<String>>, ConfigError> {
    let value = root.value(MODULE)?;
    let map = value.as_map().ok_or_else(|| ConfigError::Type {
        path: MODULE.into(),
        expected: "a mapping",
        found: value.kind(),
    })?;
    let mut out = IndexMap::new();
    for (test_type, commands) in map {
        if test_type == "out" {
            continue;
        }
        let path = format!("{MODULE}.{test_type}");
        let list = commands.as_seq().ok_or_else(|| ConfigError::Type {
            path: path.clone(),
            expected: "a command list",
            found: commands.kind(),
        })?;
        let list = list
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.scalar_text().ok_or_else(|| ConfigError::Type {
                    path: format!("{path}.{i}"),
                    expected: "a command string",
                    found: c.kind(),
                })
            })
            .collect::<Result<_, _>>()?;
        out.insert(test_type.clone(), list);
    }
    Ok(out)
}

enum HostFailure {
    Exit(SetupCommand),
    Channel(String, ChannelError),
}

fn run_on_host(host: &HostRecord, plan: &[(String, String)]) -> (Vec<SetupCommand>, Option<HostFailure>) {
    let mut done = Vec::new();
    for (test_type, command) in plan {
        match host.channel.exec(command) {
            Ok(result) => {
                let record = SetupCommand {
                    host: host.label(),
                    test_type: test_type.clone(),
                    result,
                };
                if !record.result.success() {
                    return (done, Some(HostFailure::Exit(record)));
                }
                done.push(record);
            }
            Err(e) => return (done, Some(HostFailure::Channel(host.label(), e))),
        }
    }
    (done, None)
}

fn out_body(report: &SetupReport, failed: bool) -> ConfigValue {
    let commands = report
        .commands
        .iter()
        .map(|c| {
            let mut m = IndexMap::new();
            m.insert("host".into(), ConfigValue::String(c.host.clone()));
            m.insert("type".into(), ConfigValue::String(c.test_type.clone()));
            m.insert("command".into(), ConfigValue::String(c.result.command.clone()));
            m.insert("exit_code".into(), ConfigValue::Int(c.result.exit_code.into()));
            m.insert("started_at".into(), ConfigValue::String(clock::format(&c.result.started_at)));
            m.insert("ended_at".into(), ConfigValue::String(clock::format(&c.result.ended_at())));
            ConfigValue::Map(m)
        })
        .collect();
    let mut body = IndexMap::new();
    body.insert("commands".into(), ConfigValue::Seq(commands));
    body.insert("failed".into(), ConfigValue::Bool(failed));
    body.insert("completed_at".into(), ConfigValue::String(clock::format(&clock::now())));
    ConfigValue::Map(body)
}

/// Runs each used test type's command list, once per type, on every client
/// host. Lists run in order on a host; hosts run concurrently.
pub fn workload_setup(root: &ConfigRoot, fleet: &FleetState) -> Result<SetupReport, WorkloadSetupError> {
    let types = run_types(root)?;
    let setup = setup_map(root)?;
    let client = root.string("test_control.client_category")?;
    let parallelism = root.integer("runtime.parallelism")?.max(1) as usize;

    let mut report = SetupReport {
        without_setup: types.iter().filter(|t| !setup.contains_key(*t)).cloned().collect(),
        unused: setup.keys().filter(|t| !types.contains(t)).cloned().collect(),
        ..SetupReport::default()
    };
    for t in &report.without_setup {
        log::info!("test type {t} has no workload setup entry");
    }
    let plan: Vec<(String, String)> = types
        .iter()
        .flat_map(|t| {
            setup
                .get(t)
                .into_iter()
                .flatten()
                .map(move |c| (t.clone(), c.clone()))
        })
        .collect();
    let hosts: Vec<HostRecord> = fleet.category(&client).cloned().collect();
    if hosts.is_empty() && !plan.is_empty() {
        log::warn!("no {client} hosts; workload setup commands not run");
    }

    let results = fan_out(&hosts, parallelism, |host| run_on_host(host, &plan));
    let mut failure = None;
    for (done, failed) in results {
        report.commands.extend(done);
        if failure.is_none() {
            failure = failed;
        }
    }
    if let Some(HostFailure::Exit(record)) = &failure {
        report.commands.push(record.clone());
    }
    if let Some(dir) = root.dir() {
        write_out(dir, &OutDocument::new(MODULE, out_body(&report, failure.is_some())))?;
    }
    match failure {
        None => Ok(report),
        Some(HostFailure::Exit(record)) => Err(WorkloadSetupError::Command {
            host: record.host,
            command: record.result.command,
            exit_code: record.result.exit_code,
            stderr: record.result.stderr.trim().to_owned(),
            report: Box::new(report),
        }),
        Some(HostFailure::Channel(host, source)) => Err(WorkloadSetupError::Channel {
            host,
            source,
            report: Box::new(report),
        }),
    }
}
