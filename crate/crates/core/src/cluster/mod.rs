//! Deploys the system under test from the declarative topology in
//! `mongodb_setup` and restarts it between tests.
//!
//! Every interaction with the system under test (launch, readiness,
//! initialization, stop) is a command template from configuration, so the
//! same code drives a real database or a stub.

mod topology;

use std::path::Path;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ConfigValue;
use crate::channel::{CommandResult, seconds};
use crate::clock;
use crate::config::{
    ConfigError, ConfigRoot, OutDocument, RenderFormat, out_file_name, read_document, render_value,
    write_out,
};
use crate::hooks::{self, HookError, HookRecord};
use crate::parallel::fan_out;
use crate::provision::{FleetState, HostRecord};
use crate::template::Vars;

pub use topology::{Cluster, Node, NodePaths, Topology};

pub const MODULE: &str = "mongodb_setup";

#[derive(Debug, Clone)]
struct InitSpec {
    init_role: String,
    member_role: String,
    url_role: String,
    commands: Vec<String>,
    url: String,
}

#[derive(Debug, Clone)]
struct Settings {
    launch: IndexMap<String, String>,
    launch_wrapper: String,
    readiness: String,
    readiness_timeout: Duration,
    readiness_interval: Duration,
    alive: String,
    stop: String,
    kill: String,
    grace: Duration,
    stop_poll: Duration,
    clean: String,
    init: IndexMap<String, InitSpec>,
    start_order: Vec<String>,
    parallelism: usize,
}

impl Settings {
    fn from_root(root: &ConfigRoot) -> Result<Self, ConfigError> {
        let p = |k: &str| format!("{MODULE}.{k}");
        let launch_value = root.value(&p("launch"))?;
        let launch = launch_value
            .as_map()
            .ok_or_else(|| ConfigError::Type {
                path: p("launch"),
                expected: "a mapping of role to command",
                found: launch_value.kind(),
            })?
            .iter()
            .map(|(role, cmd)| {
                cmd.scalar_text().map(|c| (role.clone(), c)).ok_or_else(|| ConfigError::Type {
                    path: p(&format!("launch.{role}")),
                    expected: "a command string",
                    found: cmd.kind(),
                })
            })
            .collect::<Result<_, _>>()?;
        let init_value = root.value(&p("init"))?;
        let mut init = IndexMap::new();
        for name in init_value.as_map().map(|m| m.keys().cloned().collect::<Vec<_>>()).unwrap_or_default() {
            let q = |k: &str| p(&format!("init.{name}.{k}"));
            init.insert(
                name.clone(),
                InitSpec {
                    init_role: root.string(&q("init_role"))?,
                    member_role: root.string(&q("member_role"))?,
                    url_role: root.string(&q("url_role"))?,
                    commands: root.strings(&q("commands"))?,
                    url: root.string(&q("url"))?,
                },
            );
        }
        Ok(Settings {
            launch,
            launch_wrapper: root.string(&p("launch_wrapper"))?,
            readiness: root.string(&p("readiness.command"))?,
            readiness_timeout: seconds(root.float(&p("readiness.timeout_seconds"))?),
            readiness_interval: seconds(root.float(&p("readiness.interval_seconds"))?),
            alive: root.string(&p("alive_command"))?,
            stop: root.string(&p("stop_command"))?,
            kill: root.string(&p("kill_command"))?,
            grace: seconds(root.float(&p("stop_grace_seconds"))?),
            stop_poll: seconds(root.float(&p("stop_poll_seconds"))?),
            clean: root.string(&p("clean_command"))?,
            init,
            start_order: root.strings(&p("start_order"))?,
            parallelism: root.integer("runtime.parallelism")?.max(1) as usize,
        })
    }

    /// Start tiers: roles in `start_order`, unlisted roles joining the
    /// `mongod` tier (or a final tier when `mongod` is not listed).
    fn tiers(&self, topology: &Topology) -> Vec<Vec<String>> {
        let mut tiers: Vec<Vec<String>> = self.start_order.iter().map(|r| vec![r.clone()]).collect();
        let mongod_tier = self.start_order.iter().position(|r| r == "mongod");
        let mut extra = Vec::new();
        for node in topology.nodes() {
            let known = tiers.iter().any(|t| t.contains(&node.role)) || extra.contains(&node.role);
            if !known {
                match mongod_tier {
                    Some(i) => tiers[i].push(node.role.clone()),
                    None => extra.push(node.role.clone()),
                }
            }
        }
        if !extra.is_empty() {
            tiers.push(extra);
        }
        tiers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub cluster_id: String,
    pub role: String,
    pub index: usize,
    pub host: String,
    pub address: String,
    pub port: i64,
    pub detached: bool,
    pub pid: u32,
    pub config_file: String,
    pub data_dir: String,
    pub log_file: String,
    pub stdout_file: String,
    pub started_at: String,
    pub ready_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub hosts: String,
    pub hostname: String,
    pub mongodb_url: String,
    pub is_replset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: String,
    pub cluster_type: String,
    pub meta: Meta,
    pub init_commands: Vec<String>,
    pub initialized_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub node: String,
    pub pid: u32,
    pub at: String,
}

/// Body of `mongodb_setup.out.yml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupOut {
    pub deploy_started_at: String,
    pub deployed_at: String,
    pub clusters: Vec<ClusterRecord>,
    pub nodes: Vec<NodeRecord>,
    pub restarts: u64,
    pub escalations: Vec<Escalation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_at: Option<String>,
}

impl SetupOut {
    /// The out-file as currently on disk, if any.
    pub fn read(workdir: &Path) -> Result<Option<SetupOut>, ConfigError> {
        let file = workdir.join(out_file_name(MODULE));
        if !file.is_file() {
            return Ok(None);
        }
        let json = read_document(&file)?
            .to_json()
            .ok_or_else(|| ConfigError::Invalid(format!("{} holds a non-finite number", file.display())))?;
        serde_json::from_value(json)
            .map(Some)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", file.display())))
    }

    fn write(&self, workdir: &Path) -> Result<(), ConfigError> {
        let json = serde_json::to_value(self).expect("serializable");
        write_out(workdir, &OutDocument::new(MODULE, ConfigValue::from_json(json)))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub topology: Topology,
    pub record: SetupOut,
    pub hooks: Vec<HookRecord>,
    pub init_results: Vec<CommandResult>,
}

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Hook(#[from] HookError),
    #[error("node {node}: {message}")]
    Node { node: String, message: String },
    #[error("initialization of {cluster} failed: `{command}` exited {exit_code}: {output}")]
    Init {
        cluster: String,
        command: String,
        exit_code: i32,
        output: String,
    },
}

fn template_error(node: &str, e: impl ToString) -> DeployError {
    DeployError::Node {
        node: node.into(),
        message: e.to_string(),
    }
}

fn workdir(root: &ConfigRoot) -> Result<&Path, ConfigError> {
    root.dir()
        .ok_or_else(|| ConfigError::Invalid("cluster setup needs a workspace directory".into()))
}

fn run_checked(host: &HostRecord, command: &str, timeout: Duration) -> Result<CommandResult, String> {
    host.channel
        .run_shell(command, timeout)
        .map_err(|e| e.to_string())
}

fn is_alive(host: &HostRecord, settings: &Settings, vars: &Vars) -> Result<bool, String> {
    let command = vars.expand(&settings.alive).map_err(|e| e.to_string())?;
    Ok(run_checked(host, &command, host.channel.config().command_timeout)?.success())
}

fn upload_config(node: &Node) -> Result<(), DeployError> {
    let text = render_value(&node.config, RenderFormat::Yaml).map_err(|e| template_error(&node.name, e))?;
    node.host
        .channel
        .put_bytes(text.as_bytes(), &node.paths.config_file)
        .map_err(|e| template_error(&node.name, e))
}

fn launch(node: &Node, settings: &Settings) -> Result<NodeRecord, DeployError> {
    let fail = |message: String| DeployError::Node {
        node: node.name.clone(),
        message,
    };
    let template = settings
        .launch
        .get(&node.role)
        .ok_or_else(|| fail(format!("no launch command for role {}", node.role)))?;
    let mut vars = node.vars();
    let command = vars.expand(template).map_err(|e| fail(e.to_string()))?;
    vars.set("command", &command);
    let wrapped = vars.expand(&settings.launch_wrapper).map_err(|e| fail(e.to_string()))?;
    let started_at = clock::now();
    let result = node.host.channel.exec(&wrapped).map_err(|e| fail(e.to_string()))?;
    if !result.success() {
        return Err(fail(format!("launch exited {}: {}", result.exit_code, result.stderr.trim())));
    }
    let pid: u32 = result
        .stdout
        .lines()
        .rev()
        .find_map(|l| l.trim().parse().ok())
        .ok_or_else(|| fail(format!("launch printed no pid: {:?}", result.stdout)))?;
    vars.set("pid", pid);
    let ready = vars.expand(&settings.readiness).map_err(|e| fail(e.to_string()))?;
    let deadline = Instant::now() + settings.readiness_timeout;
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let probe = node
            .host
            .channel
            .run_shell(&ready, remaining.max(Duration::from_millis(100)));
        if matches!(&probe, Ok(r) if r.success()) {
            break;
        }
        if Instant::now() >= deadline {
            return Err(fail(format!(
                "not ready after {:.1}s (pid {pid})",
                settings.readiness_timeout.as_secs_f64()
            )));
        }
        std::thread::sleep(settings.readiness_interval.min(remaining));
    }
    Ok(NodeRecord {
        name: node.name.clone(),
        cluster_id: node.cluster_id.clone(),
        role: node.role.clone(),
        index: node.index,
        host: node.host.label(),
        address: node.address.clone(),
        port: node.port,
        detached: node.detached,
        pid,
        config_file: node.paths.config_file.clone(),
        data_dir: node.paths.data_dir.clone(),
        log_file: node.paths.log_file.clone(),
        stdout_file: node.paths.stdout_file.clone(),
        started_at: clock::format(&started_at),
        ready_at: clock::format(&clock::now()),
    })
}

fn member_documents(members: &[&Node]) -> String {
    members
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{{_id: {i}, host: \"{}\"}}", n.endpoint()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cluster_vars(cluster: &Cluster, spec: &InitSpec) -> Vars {
    let members: Vec<&Node> = cluster.active(&spec.member_role).collect();
    let url_nodes: Vec<String> = cluster.active(&spec.url_role).map(Node::endpoint).collect();
    let mut vars = Vars::new()
        .with("cluster_id", &cluster.id)
        .with("cluster_type", &cluster.cluster_type)
        .with("members", members.iter().map(|n| n.endpoint()).collect::<Vec<_>>().join(","))
        .with("member_documents", member_documents(&members))
        .with("hosts", url_nodes.join(","));
    let mut roles: Vec<&str> = cluster.nodes.iter().map(|n| n.role.as_str()).collect();
    roles.dedup();
    for role in roles {
        let list: Vec<String> = cluster.active(role).map(Node::endpoint).collect();
        vars.set(&format!("members_{role}"), list.join(","));
    }
    vars
}

fn meta(cluster: &Cluster, spec: &InitSpec) -> Result<Meta, DeployError> {
    let vars = cluster_vars(cluster, spec);
    let first = cluster.active(&spec.url_role).next();
    Ok(Meta {
        hosts: vars.get("hosts").unwrap_or_default().to_owned(),
        hostname: first.map(|n| n.address.clone()).unwrap_or_default(),
        mongodb_url: vars.expand(&spec.url).map_err(|e| template_error(&cluster.id, e))?,
        is_replset: cluster.cluster_type == "replset",
    })
}

fn initialize(
    cluster: &Cluster,
    spec: &InitSpec,
    results: &mut Vec<CommandResult>,
) -> Result<(Vec<String>, Option<String>), DeployError> {
    if spec.commands.is_empty() {
        return Ok((Vec::new(), None));
    }
    let target = cluster.active(&spec.init_role).next().ok_or_else(|| DeployError::Node {
        node: cluster.id.clone(),
        message: format!("no non-detached {} node to initialize from", spec.init_role),
    })?;
    let mut vars = target.vars();
    vars.extend(&cluster_vars(cluster, spec));
    let mut issued = Vec::new();
    for template in &spec.commands {
        let command = vars.expand(template).map_err(|e| template_error(&cluster.id, e))?;
        let result = target
            .host
            .channel
            .exec(&command)
            .map_err(|e| template_error(&target.name, e))?;
        issued.push(command.clone());
        let failed = !result.success();
        results.push(result.clone());
        if failed {
            return Err(DeployError::Init {
                cluster: cluster.id.clone(),
                command,
                exit_code: result.exit_code,
                output: format!("{}{}", result.stdout, result.stderr).trim().to_owned(),
            });
        }
    }
    Ok((issued, Some(clock::format(&clock::now()))))
}

fn kill_best_effort(records: &[NodeRecord], fleet: &FleetState, settings: &Settings) {
    for r in records {
        if let Some(host) = fleet.hosts.iter().find(|h| h.label() == r.host) {
            if let Ok(cmd) = Vars::new().with("pid", r.pid).expand(&settings.kill) {
                let _ = host.channel.exec(&cmd);
            }
        }
    }
}

fn deploy_nodes(
    topology: Topology,
    settings: &Settings,
    fleet: &FleetState,
    workdir: &Path,
    restarts: u64,
    escalations: Vec<Escalation>,
    hooks: Vec<HookRecord>,
) -> Result<ClusterState, DeployError> {
    let deploy_started_at = clock::format(&clock::now());
    let nodes: Vec<&Node> = topology.nodes().collect();
    for r in fan_out(&nodes, settings.parallelism, |n| upload_config(n)) {
        r?;
    }
    let mut records = Vec::new();
    for tier in settings.tiers(&topology) {
        let members: Vec<&Node> = nodes.iter().copied().filter(|n| tier.contains(&n.role)).collect();
        let launched = fan_out(&members, settings.parallelism, |n| launch(n, settings));
        let mut failure = None;
        for r in launched {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => failure = failure.or(Some(e)),
            }
        }
        if let Some(e) = failure {
            kill_best_effort(&records, fleet, settings);
            return Err(e);
        }
    }
    let mut init_results = Vec::new();
    let mut clusters = Vec::new();
    for cluster in &topology.clusters {
        let spec = &settings.init[&cluster.cluster_type];
        let (init_commands, initialized_at) = match initialize(cluster, spec, &mut init_results) {
            Ok(v) => v,
            Err(e) => {
                kill_best_effort(&records, fleet, settings);
                return Err(e);
            }
        };
        clusters.push(ClusterRecord {
            id: cluster.id.clone(),
            cluster_type: cluster.cluster_type.clone(),
            meta: meta(cluster, spec)?,
            init_commands,
            initialized_at,
        });
    }
    let record = SetupOut {
        deploy_started_at,
        deployed_at: clock::format(&clock::now()),
        clusters,
        nodes: records,
        restarts,
        escalations,
        stopped_at: None,
    };
    record.write(workdir)?;
    Ok(ClusterState {
        topology,
        record,
        hooks,
        init_results,
    })
}

fn pre_cluster_start(root: &ConfigRoot, fleet: &FleetState, settings: &Settings) -> Result<Vec<HookRecord>, DeployError> {
    let actions = hooks::actions(root, "test_control.pre_cluster_start")?;
    let mut no_restart = |_| Err("restart is not allowed before the cluster starts".to_owned());
    hooks::run_hook(
        "pre_cluster_start",
        &actions,
        fleet,
        workdir(root)?,
        settings.parallelism,
        &mut no_restart,
    )
    .map_err(|(_, e)| DeployError::Hook(e))
}

/// Uploads every node's config, starts nodes tier by tier, waits for
/// readiness, initializes each cluster and writes `mongodb_setup.out.yml`.
pub fn deploy(root: &ConfigRoot, fleet: &FleetState) -> Result<ClusterState, DeployError> {
    let settings = Settings::from_root(root)?;
    let topology = Topology::from_root(root, fleet)?;
    let hooks = pre_cluster_start(root, fleet, &settings)?;
    deploy_nodes(topology, &settings, fleet, workdir(root)?, 0, Vec::new(), hooks)
}

/// Stops one recorded node: stop command, wait out the grace period, then
/// the kill command. Returns whether the kill was needed.
fn stop_node(record: &NodeRecord, host: &HostRecord, settings: &Settings) -> Result<bool, String> {
    let vars = Vars::new()
        .with("pid", record.pid)
        .with("data_dir", &record.data_dir)
        .with("host", &record.address)
        .with("port", record.port);
    let wait_dead = |limit: Duration| -> Result<bool, String> {
        let deadline = Instant::now() + limit;
        loop {
            if !is_alive(host, settings, &vars)? {
                return Ok(true);
            }
            if Instant::now() >= deadline {
                return Ok(false);
            }
            std::thread::sleep(settings.stop_poll);
        }
    };
    if !is_alive(host, settings, &vars)? {
        return Ok(false);
    }
    let stop = vars.expand(&settings.stop).map_err(|e| e.to_string())?;
    run_checked(host, &stop, host.channel.config().command_timeout)?;
    if wait_dead(settings.grace)? {
        return Ok(false);
    }
    let kill = vars.expand(&settings.kill).map_err(|e| e.to_string())?;
    run_checked(host, &kill, host.channel.config().command_timeout)?;
    if wait_dead(settings.grace.max(Duration::from_secs(5)))? {
        Ok(true)
    } else {
        Err(format!("pid {} survived the kill command", record.pid))
    }
}

fn stop_recorded(
    previous: &SetupOut,
    fleet: &FleetState,
    settings: &Settings,
) -> Result<Vec<Escalation>, DeployError> {
    let outcomes = fan_out(&previous.nodes, settings.parallelism, |r| {
        let host = fleet
            .hosts
            .iter()
            .find(|h| h.label() == r.host)
            .ok_or_else(|| format!("host {} is not in the fleet", r.host))?;
        stop_node(r, host, settings)
    });
    let mut escalations = Vec::new();
    for (r, outcome) in previous.nodes.iter().zip(outcomes) {
        match outcome {
            Ok(true) => escalations.push(Escalation {
                node: r.name.clone(),
                pid: r.pid,
                at: clock::format(&clock::now()),
            }),
            Ok(false) => {}
            Err(message) => {
                return Err(DeployError::Node {
                    node: r.name.clone(),
                    message,
                });
            }
        }
    }
    Ok(escalations)
}

/// Stops every node, optionally clears data directories, and deploys again.
pub fn restart(root: &ConfigRoot, fleet: &FleetState, clean_db: bool) -> Result<ClusterState, DeployError> {
    let dir = workdir(root)?;
    let settings = Settings::from_root(root)?;
    let previous = SetupOut::read(dir)?.ok_or_else(|| ConfigError::Contract {
        module: MODULE.into(),
        message: format!("restart needs {} from a prior deploy", out_file_name(MODULE)),
    })?;
    let mut escalations = previous.escalations.clone();
    escalations.extend(stop_recorded(&previous, fleet, &settings)?);
    let topology = Topology::from_root(root, fleet)?;
    if clean_db {
        let nodes: Vec<&Node> = topology.nodes().collect();
        let cleaned = fan_out(&nodes, settings.parallelism, |n| {
            let cmd = n.vars().expand(&settings.clean).map_err(|e| e.to_string())?;
            let r = n.host.channel.exec(&cmd).map_err(|e| e.to_string())?;
            if r.success() {
                Ok(())
            } else {
                Err(format!("clean exited {}: {}", r.exit_code, r.stderr.trim()))
            }
        });
        for (n, r) in nodes.iter().zip(cleaned) {
            r.map_err(|message| DeployError::Node {
                node: n.name.clone(),
                message,
            })?;
        }
    }
    let hooks = pre_cluster_start(root, fleet, &settings)?;
    deploy_nodes(topology, &settings, fleet, dir, previous.restarts + 1, escalations, hooks)
}

/// Stops every recorded node, for teardown. A workspace without a running
/// cluster is fine.
pub fn stop_all(root: &ConfigRoot, fleet: &FleetState) -> Result<Vec<Escalation>, DeployError> {
    let dir = workdir(root)?;
    let settings = Settings::from_root(root)?;
    let Some(mut previous) = SetupOut::read(dir)? else {
        return Ok(Vec::new());
    };
    if previous.stopped_at.is_some() {
        return Ok(Vec::new());
    }
    let escalations = stop_recorded(&previous, fleet, &settings)?;
    previous.escalations.extend(escalations.clone());
    previous.stopped_at = Some(clock::format(&clock::now()));
    previous.write(dir)?;
    Ok(escalations)
}
