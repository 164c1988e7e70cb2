//! Host fleet lifecycle: create, probe, system setup, destroy.
//!
//! Host facts are published in `infrastructure_provisioning.out.yml`, one
//! sequence per category:
//!
//! ```yaml
//! mongod:
//!   - public_ip: 198.51.100.1
//!     private_ip: 10.2.0.100
//!     channel: local
//!     host_dir: hosts/mongod.0-1f2e3d4c
//!     instance_id: i-1f2e3d4c5b6a79881
//! ```

mod census;
mod spec;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ConfigValue;
use crate::channel::{Channel, ChannelConfig, ChannelKind, ts_serde};
use crate::clock::{self, Timestamp};
use crate::config::{ConfigError, ConfigRoot, OutDocument, out_file_name, read_document, write_out};
use crate::parallel::fan_out;

pub use census::{Faults, LOCAL_STATE_FILE, MOCK_STATE_FILE};
pub use spec::{BackendKind, CategorySpec, DESTROYED_AT, FleetSpec, Slot};

use census::DirectoryHosts;
use spec::{Settings, backend_kind};

pub const MODULE: &str = "infrastructure_provisioning";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetStatus {
    Absent,
    Provisioning,
    Ready,
    Degraded,
    Destroying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Create,
    Probe,
    Destroy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    #[serde(with = "ts_serde")]
    pub at: Timestamp,
    pub action: Action,
    pub host: String,
    pub instance_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// One provisioned node.
#[derive(Debug, Clone)]
pub struct HostRecord {
    pub category: String,
    pub index: usize,
    pub public_ip: String,
    pub private_ip: String,
    pub instance_id: String,
    /// Working directory relative to the workspace, for local channels.
    pub host_dir: Option<PathBuf>,
    pub channel: Channel,
}

impl HostRecord {
    pub fn label(&self) -> String {
        format!("{}.{}", self.category, self.index)
    }

    fn to_out(&self) -> ConfigValue {
        let mut m = IndexMap::new();
        m.insert("public_ip".into(), ConfigValue::String(self.public_ip.clone()));
        m.insert("private_ip".into(), ConfigValue::String(self.private_ip.clone()));
        let kind = match self.channel.kind() {
            ChannelKind::Local { .. } => "local",
            ChannelKind::Ssh { .. } => "ssh",
        };
        m.insert("channel".into(), ConfigValue::String(kind.into()));
        if let Some(dir) = &self.host_dir {
            m.insert("host_dir".into(), ConfigValue::String(dir.to_string_lossy().into_owned()));
        }
        m.insert("instance_id".into(), ConfigValue::String(self.instance_id.clone()));
        ConfigValue::Map(m)
    }
}

/// Builds a host from an out-file style entry (`public_ip`, optional
/// `private_ip`, `channel`, `host_dir`, `instance_id`).
fn host_from_entry(
    category: &str,
    index: usize,
    entry: &ConfigValue,
    workdir: &Path,
    hosts_dir: &str,
    default_channel: &str,
    config: &ChannelConfig,
) -> Result<HostRecord, String> {
    let label = format!("{category}.{index}");
    let field = |k: &str| entry.get(k).and_then(ConfigValue::scalar_text);
    let public_ip = field("public_ip").ok_or_else(|| format!("{label} has no public_ip"))?;
    let private_ip = field("private_ip").unwrap_or_else(|| public_ip.clone());
    let kind = field("channel").unwrap_or_else(|| default_channel.to_owned());
    let (channel, host_dir) = match kind.as_str() {
        "local" => {
            let dir = field("host_dir").unwrap_or_else(|| format!("{hosts_dir}/{label}"));
            let channel = Channel::local(label.clone(), workdir.join(&dir), config.clone());
            (channel, Some(PathBuf::from(dir)))
        }
        "ssh" => {
            let channel = Channel::new(
                label.clone(),
                ChannelKind::Ssh {
                    address: public_ip.clone(),
                },
                config.clone(),
            );
            (channel, None)
        }
        other => return Err(format!("{label}: unknown channel kind `{other}`")),
    };
    Ok(HostRecord {
        category: category.to_owned(),
        index,
        public_ip,
        private_ip,
        instance_id: field("instance_id").unwrap_or_else(|| format!("static-{label}")),
        host_dir,
        channel,
    })
}

#[derive(Debug, Clone)]
pub struct FleetState {
    pub status: FleetStatus,
    pub hosts: Vec<HostRecord>,
    pub lifecycle_log: Vec<LifecycleEvent>,
}

impl FleetState {
    fn new(status: FleetStatus) -> Self {
        FleetState {
            status,
            hosts: Vec::new(),
            lifecycle_log: Vec::new(),
        }
    }

    pub fn category<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a HostRecord> + 'a {
        self.hosts.iter().filter(move |h| h.category == name)
    }

    pub fn host(&self, category: &str, index: usize) -> Option<&HostRecord> {
        self.hosts.iter().find(|h| h.category == category && h.index == index)
    }

    /// Finds the host a topology node refers to by address.
    pub fn by_address(&self, address: &str) -> Option<&HostRecord> {
        self.hosts
            .iter()
            .find(|h| h.public_ip == address || h.private_ip == address)
    }

    pub fn count(&self, action: Action) -> usize {
        self.lifecycle_log.iter().filter(|e| e.action == action && e.ok).count()
    }

    /// The fleet as published in the out-file. Works with hand-written
    /// out-files, which is how a provisioning step is skipped.
    pub fn from_out(root: &ConfigRoot) -> Result<FleetState, ConfigError> {
        let contract = |message: String| ConfigError::Contract {
            module: MODULE.into(),
            message,
        };
        let out = root.lookup(&format!("{MODULE}.out"))?.ok_or_else(|| {
            contract(format!(
                "{} is missing; run infrastructure_provisioning or supply it by hand",
                out_file_name(MODULE)
            ))
        })?;
        let map = out
            .as_map()
            .ok_or_else(|| contract(format!("{} is not a mapping", out_file_name(MODULE))))?;
        if let Some(at) = map.get(DESTROYED_AT) {
            return Err(contract(format!(
                "the fleet in {} was destroyed at {}",
                out_file_name(MODULE),
                at.scalar_text().unwrap_or_default()
            )));
        }
        let workdir = root.dir().map(Path::to_owned).unwrap_or_default();
        let hosts_dir = root.string(&format!("{MODULE}.hosts_dir"))?;
        let default_channel = root.string(&format!("{MODULE}.channel.default_kind"))?;
        let config = ChannelConfig::from_root(root)?;
        let mut hosts = Vec::new();
        for (category, entries) in map {
            let entries = entries
                .as_seq()
                .ok_or_else(|| contract(format!("out.{category} must be a sequence")))?;
            for (index, entry) in entries.iter().enumerate() {
                hosts.push(
                    host_from_entry(category, index, entry, &workdir, &hosts_dir, &default_channel, &config)
                        .map_err(contract)?,
                );
            }
        }
        Ok(FleetState {
            status: FleetStatus::Ready,
            hosts,
            lifecycle_log: Vec::new(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ProvisionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("provisioning failed: {message}")]
    Provisioning { message: String, state: Box<FleetState> },
    #[error("fleet degraded: {message}")]
    Degraded { message: String, state: Box<FleetState> },
    #[error("teardown failed: {}", failures.iter().map(|(h, m)| format!("{h}: {m}")).collect::<Vec<_>>().join("; "))]
    Teardown {
        failures: Vec<(String, String)>,
        state: Box<FleetState>,
    },
}

impl ProvisionError {
    pub fn state(&self) -> Option<&FleetState> {
        match self {
            ProvisionError::Config(_) => None,
            ProvisionError::Provisioning { state, .. }
            | ProvisionError::Degraded { state, .. }
            | ProvisionError::Teardown { state, .. } => Some(state),
        }
    }
}

pub(crate) trait Backend: Sync {
    /// Hosts this backend still holds, possibly from an earlier run.
    fn live(&self) -> Result<Vec<HostRecord>, String>;
    fn check_capacity(&self, spec: &FleetSpec) -> Result<(), String>;
    fn create(&self, slot: &Slot) -> Result<HostRecord, String>;
    /// Releasing an already released host succeeds.
    fn destroy(&self, host: &HostRecord) -> Result<(), String>;
}

/// Operator-supplied machines; nothing is created or released.
struct StaticHosts {
    workdir: PathBuf,
    hosts_dir: String,
    default_channel: String,
    channel: ChannelConfig,
    entries: IndexMap<String, Vec<ConfigValue>>,
    previous: Vec<HostRecord>,
}

impl StaticHosts {
    fn from_root(root: &ConfigRoot, settings: &Settings) -> Result<Self, ConfigError> {
        let path = format!("{MODULE}.backend_params.hosts");
        let value = root.value(&path)?;
        let map = value.as_map().ok_or_else(|| ConfigError::Type {
            path: path.clone(),
            expected: "a mapping of category to host list",
            found: value.kind(),
        })?;
        let mut entries = IndexMap::new();
        for (category, list) in map {
            let list = list.as_seq().ok_or_else(|| ConfigError::Type {
                path: format!("{path}.{category}"),
                expected: "a sequence",
                found: list.kind(),
            })?;
            entries.insert(category.clone(), list.to_vec());
        }
        Ok(StaticHosts {
            workdir: settings.workdir.clone(),
            hosts_dir: settings.hosts_dir.clone(),
            default_channel: settings.default_channel.clone(),
            channel: settings.channel.clone(),
            entries,
            previous: previous_static_fleet(root),
        })
    }
}

fn previous_static_fleet(root: &ConfigRoot) -> Vec<HostRecord> {
    FleetState::from_out(root)
        .map(|f| {
            f.hosts
                .into_iter()
                .filter(|h| h.instance_id.starts_with("static-"))
                .collect()
        })
        .unwrap_or_default()
}

impl Backend for StaticHosts {
    fn live(&self) -> Result<Vec<HostRecord>, String> {
        Ok(self.previous.clone())
    }

    fn check_capacity(&self, spec: &FleetSpec) -> Result<(), String> {
        for c in &spec.categories {
            let have = self.entries.get(&c.name).map_or(0, Vec::len);
            if have < c.count {
                return Err(format!("{} {} hosts requested, {have} listed", c.count, c.name));
            }
        }
        Ok(())
    }

    fn create(&self, slot: &Slot) -> Result<HostRecord, String> {
        let entry = self
            .entries
            .get(&slot.category)
            .and_then(|l| l.get(slot.index))
            .ok_or_else(|| format!("no static host listed for {}", slot.label()))?;
        host_from_entry(
            &slot.category,
            slot.index,
            entry,
            &self.workdir,
            &self.hosts_dir,
            &self.default_channel,
            &self.channel,
        )
    }

    fn destroy(&self, _host: &HostRecord) -> Result<(), String> {
        Ok(())
    }
}

fn open_backend(root: &ConfigRoot, settings: &Settings) -> Result<Box<dyn Backend>, ConfigError> {
    let kind = backend_kind(root)?;
    Ok(match kind {
        BackendKind::StaticHosts => Box::new(StaticHosts::from_root(root, settings)?),
        _ => Box::new(DirectoryHosts::from_root(
            root,
            kind,
            &settings.workdir,
            settings.hosts_dir.clone(),
            settings.channel.clone(),
        )?),
    })
}

fn workdir(root: &ConfigRoot) -> Result<PathBuf, ConfigError> {
    root.dir()
        .map(Path::to_owned)
        .ok_or_else(|| ConfigError::Invalid("provisioning needs a workspace directory".into()))
}

struct Log(Mutex<Vec<LifecycleEvent>>);

impl Log {
    fn push(&self, action: Action, host: &HostRecord, result: &Result<(), String>) {
        self.push_raw(action, host.label(), host.instance_id.clone(), result);
    }

    fn push_raw(&self, action: Action, host: String, instance_id: String, result: &Result<(), String>) {
        let mut log = self.0.lock().unwrap();
        log.push(LifecycleEvent {
            at: clock::now(),
            action,
            host,
            instance_id,
            ok: result.is_ok(),
            detail: result.as_ref().err().cloned().unwrap_or_default(),
        });
    }

    fn take(self) -> Vec<LifecycleEvent> {
        self.0.into_inner().unwrap()
    }
}

/// Destroys `hosts`, retrying refusals. Returns the hosts that survived.
fn release(
    backend: &dyn Backend,
    hosts: &[HostRecord],
    retries: usize,
    parallelism: usize,
    log: &Log,
) -> Vec<(String, String)> {
    let outcomes = fan_out(hosts, parallelism, |host| {
        let mut last = Ok(());
        for _ in 0..=retries {
            last = backend.destroy(host);
            log.push(Action::Destroy, host, &last);
            if last.is_ok() {
                break;
            }
        }
        last.err().map(|e| (host.label(), e))
    });
    outcomes.into_iter().flatten().collect()
}

fn mark_destroyed(dir: &Path) -> Result<(), ConfigError> {
    let file = dir.join(out_file_name(MODULE));
    if !file.is_file() {
        return Ok(());
    }
    let mut body = read_document(&file)?;
    let map = body.as_map_mut().expect("documents are mappings");
    if map.contains_key(DESTROYED_AT) {
        return Ok(());
    }
    map.insert(
        DESTROYED_AT.into(),
        ConfigValue::String(clock::format(&clock::now())),
    );
    write_out(dir, &OutDocument::new(MODULE, body))?;
    Ok(())
}

fn probe(host: &HostRecord, settings: &Settings) -> Result<(), String> {
    let p = &settings.probe;
    let mut last = String::new();
    for attempt in 0..p.attempts {
        if attempt > 0 {
            std::thread::sleep(p.retry_delay);
        }
        match host.channel.run_shell(&p.command, p.timeout) {
            Ok(r) if r.success() => return Ok(()),
            Ok(r) => last = format!("probe exited {}: {}", r.exit_code, r.stderr.trim()),
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

fn system_setup(host: &HostRecord, settings: &Settings) -> Result<(), String> {
    for command in &settings.system_setup {
        let r = host.channel.exec(command).map_err(|e| e.to_string())?;
        if !r.success() {
            return Err(format!(
                "system setup `{command}` exited {} on {}: {}",
                r.exit_code,
                host.label(),
                r.stderr.trim()
            ));
        }
    }
    Ok(())
}

/// Creates the configured fleet from scratch. Any failure after the first
/// host exists destroys every created host before the error is returned.
pub fn provision(root: &ConfigRoot) -> Result<FleetState, ProvisionError> {
    let dir = workdir(root)?;
    let settings = Settings::from_root(root, dir.clone())?;
    let mut spec = FleetSpec::from_root(root)?;
    let backend = open_backend(root, &settings)?;
    if spec.backend == BackendKind::StaticHosts && spec.categories.is_empty() {
        spec.categories = static_categories(root)?;
    }
    let log = Log(Mutex::new(Vec::new()));
    let fail = |log: Log, created: Vec<HostRecord>, message: String, degraded: bool| {
        let leftover = release(&*backend, &created, settings.destroy_retries, settings.parallelism, &log);
        let mut message = message;
        if !leftover.is_empty() {
            let names: Vec<_> = leftover.iter().map(|(h, e)| format!("{h} ({e})")).collect();
            message.push_str(&format!("; cleanup left hosts live: {}", names.join(", ")));
        }
        let state = Box::new(FleetState {
            status: if leftover.is_empty() { FleetStatus::Absent } else { FleetStatus::Degraded },
            hosts: Vec::new(),
            lifecycle_log: log.take(),
        });
        if degraded {
            ProvisionError::Degraded { message, state }
        } else {
            ProvisionError::Provisioning { message, state }
        }
    };

    // Fresh-cluster policy: whatever an earlier run left behind goes first.
    mark_destroyed(&dir)?;
    let stale = backend.live().map_err(|m| fail(Log(Mutex::new(Vec::new())), Vec::new(), m, false))?;
    let leftover = release(&*backend, &stale, settings.destroy_retries, settings.parallelism, &log);
    if !leftover.is_empty() {
        return Err(ProvisionError::Teardown {
            failures: leftover,
            state: Box::new(FleetState {
                status: FleetStatus::Degraded,
                hosts: Vec::new(),
                lifecycle_log: log.take(),
            }),
        });
    }

    if let Err(message) = backend.check_capacity(&spec) {
        return Err(fail(log, Vec::new(), message, false));
    }
    let slots = spec.slots();
    let created = fan_out(&slots, settings.parallelism, |slot| {
        let result = backend.create(slot);
        let outcome = result.as_ref().map(|_| ()).map_err(Clone::clone);
        let instance = result.as_ref().map(|h| h.instance_id.clone()).unwrap_or_default();
        log.push_raw(Action::Create, slot.label(), instance, &outcome);
        result
    });
    let mut hosts = Vec::new();
    let mut errors = Vec::new();
    for r in created {
        match r {
            Ok(h) => hosts.push(h),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(fail(log, hosts, errors.join("; "), false));
    }

    let probes = fan_out(&hosts, settings.parallelism, |host| {
        let r = probe(host, &settings);
        log.push(Action::Probe, host, &r);
        r.err().map(|e| format!("{} unreachable: {e}", host.label()))
    });
    let unreachable: Vec<String> = probes.into_iter().flatten().collect();
    if !unreachable.is_empty() {
        return Err(fail(log, hosts, unreachable.join("; "), true));
    }

    let setup = fan_out(&hosts, settings.parallelism, |host| system_setup(host, &settings).err());
    let setup_errors: Vec<String> = setup.into_iter().flatten().collect();
    if !setup_errors.is_empty() {
        return Err(fail(log, hosts, setup_errors.join("; "), false));
    }

    let mut body = IndexMap::new();
    for host in &hosts {
        let entry = body
            .entry(host.category.clone())
            .or_insert_with(|| ConfigValue::Seq(Vec::new()));
        if let ConfigValue::Seq(list) = entry {
            list.push(host.to_out());
        }
    }
    if let Err(e) = write_out(&dir, &OutDocument::new(MODULE, ConfigValue::Map(body))) {
        return Err(fail(log, hosts, e.to_string(), false));
    }
    Ok(FleetState {
        status: FleetStatus::Ready,
        hosts,
        lifecycle_log: log.take(),
    })
}

fn static_categories(root: &ConfigRoot) -> Result<Vec<CategorySpec>, ConfigError> {
    let value = root.value(&format!("{MODULE}.backend_params.hosts"))?;
    let categories: Vec<CategorySpec> = value
        .as_map()
        .into_iter()
        .flatten()
        .filter_map(|(name, list)| {
            let n = list.as_seq().map_or(0, <[ConfigValue]>::len);
            (n > 0).then(|| CategorySpec {
                name: name.clone(),
                count: n,
                instance_class: None,
            })
        })
        .collect();
    if categories.is_empty() {
        return Err(ConfigError::Contract {
            module: MODULE.into(),
            message: "static_hosts lists no hosts".into(),
        });
    }
    Ok(categories)
}

/// Releases every live host. Safe to call on any prior state, any number of
/// times; the out-file is kept and marked with `destroyed_at`.
pub fn destroy(root: &ConfigRoot) -> Result<FleetState, ProvisionError> {
    let dir = workdir(root)?;
    let settings = Settings::from_root(root, dir.clone())?;
    let backend = open_backend(root, &settings)?;
    let log = Log(Mutex::new(Vec::new()));
    let live = backend.live().map_err(|m| ProvisionError::Teardown {
        failures: vec![("census".into(), m)],
        state: Box::new(FleetState::new(FleetStatus::Degraded)),
    })?;
    let failures = release(&*backend, &live, settings.destroy_retries, settings.parallelism, &log);
    if !failures.is_empty() {
        let survivors = backend.live().unwrap_or_default();
        return Err(ProvisionError::Teardown {
            failures,
            state: Box::new(FleetState {
                status: FleetStatus::Degraded,
                hosts: survivors,
                lifecycle_log: log.take(),
            }),
        });
    }
    mark_destroyed(&dir)?;
    Ok(FleetState {
        status: FleetStatus::Absent,
        hosts: Vec::new(),
        lifecycle_log: log.take(),
    })
}

/// Hosts the backend of `root` still holds, for audits and tests.
pub fn live_hosts(root: &ConfigRoot) -> Result<Vec<HostRecord>, ProvisionError> {
    let dir = workdir(root)?;
    let settings = Settings::from_root(root, dir)?;
    let backend = open_backend(root, &settings)?;
    backend.live().map_err(|m| ProvisionError::Config(ConfigError::Invalid(m)))
}
