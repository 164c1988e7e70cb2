use std::path::PathBuf;
use std::time::Duration;

use crate::ConfigValue;
use crate::channel::{ChannelConfig, seconds};
use crate::config::{ConfigError, ConfigPath, ConfigRoot};

use super::MODULE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    MockCloud,
    StaticHosts,
    Local,
}

impl BackendKind {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "mock_cloud" => Some(BackendKind::MockCloud),
            "static_hosts" => Some(BackendKind::StaticHosts),
            "local" => Some(BackendKind::Local),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::MockCloud => "mock_cloud",
            BackendKind::StaticHosts => "static_hosts",
            BackendKind::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorySpec {
    pub name: String,
    pub count: usize,
    pub instance_class: Option<String>,
}

/// The requested fleet, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub backend: BackendKind,
    pub categories: Vec<CategorySpec>,
}

/// Key the out-file uses to mark a destroyed fleet; not a valid category.
pub const DESTROYED_AT: &str = "destroyed_at";

fn shape(message: impl Into<String>) -> ConfigError {
    ConfigError::Contract {
        module: MODULE.into(),
        message: message.into(),
    }
}

pub(super) fn backend_kind(root: &ConfigRoot) -> Result<BackendKind, ConfigError> {
    let name = root.string(&format!("{MODULE}.backend"))?;
    BackendKind::parse(&name)
        .ok_or_else(|| shape(format!("unknown backend `{name}` (mock_cloud, static_hosts, local)")))
}

fn valid_category(name: &str) -> bool {
    name != DESTROYED_AT
        && !name.chars().all(|c| c.is_ascii_digit())
        && ConfigPath::parse(name).map(|p| p.len() == 1).unwrap_or(false)
}

impl FleetSpec {
    pub fn from_root(root: &ConfigRoot) -> Result<Self, ConfigError> {
        let backend = backend_kind(root)?;
        let fleet = root.value(&format!("{MODULE}.fleet"))?;
        let fleet = fleet
            .as_map()
            .ok_or_else(|| shape(format!("`fleet` must be a mapping, found {}", fleet.kind())))?;
        let mut categories = Vec::new();
        for (name, entry) in fleet {
            if !valid_category(name) {
                return Err(shape(format!("`{name}` is not a usable category name")));
            }
            let count = entry
                .get("count")
                .and_then(ConfigValue::as_i64)
                .filter(|c| *c >= 1)
                .ok_or_else(|| shape(format!("fleet.{name}.count must be a positive integer")))?;
            let instance_class = match entry.get("instance_class") {
                None | Some(ConfigValue::Null) => None,
                Some(v) => Some(
                    v.scalar_text()
                        .ok_or_else(|| shape(format!("fleet.{name}.instance_class must be a scalar")))?,
                ),
            };
            categories.push(CategorySpec {
                name: name.clone(),
                count: count as usize,
                instance_class,
            });
        }
        if categories.is_empty() && backend != BackendKind::StaticHosts {
            return Err(shape("the fleet requests no hosts"));
        }
        Ok(FleetSpec { backend, categories })
    }

    pub fn total(&self) -> usize {
        self.categories.iter().map(|c| c.count).sum()
    }

    /// (category, index) in creation order; the position is the host's ordinal.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for c in &self.categories {
            for index in 0..c.count {
                out.push(Slot {
                    category: c.name.clone(),
                    index,
                    ordinal: out.len(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub category: String,
    pub index: usize,
    pub ordinal: usize,
}

impl Slot {
    pub fn label(&self) -> String {
        format!("{}.{}", self.category, self.index)
    }
}

#[derive(Debug, Clone)]
pub(super) struct ProbeSettings {
    pub command: String,
    pub timeout: Duration,
    pub attempts: usize,
    pub retry_delay: Duration,
}

/// Everything provisioning reads from configuration, read up front.
#[derive(Debug, Clone)]
pub(super) struct Settings {
    pub workdir: PathBuf,
    pub hosts_dir: String,
    pub destroy_retries: usize,
    pub probe: ProbeSettings,
    pub system_setup: Vec<String>,
    pub parallelism: usize,
    pub channel: ChannelConfig,
    pub default_channel: String,
}

pub(super) fn count(root: &ConfigRoot, path: &str) -> Result<usize, ConfigError> {
    let n = root.integer(path)?;
    usize::try_from(n).map_err(|_| ConfigError::Type {
        path: path.into(),
        expected: "a non-negative integer",
        found: "negative integer",
    })
}

impl Settings {
    pub fn from_root(root: &ConfigRoot, workdir: PathBuf) -> Result<Self, ConfigError> {
        let p = |k: &str| format!("{MODULE}.{k}");
        Ok(Settings {
            workdir,
            hosts_dir: root.string(&p("hosts_dir"))?,
            destroy_retries: count(root, &p("destroy_retries"))?,
            probe: ProbeSettings {
                command: root.string(&p("probe.command"))?,
                timeout: seconds(root.float(&p("probe.timeout_seconds"))?),
                attempts: 1 + count(root, &p("probe.retries"))?,
                retry_delay: seconds(root.float(&p("probe.retry_delay_seconds"))?),
            },
            system_setup: root.strings(&p("system_setup"))?,
            parallelism: count(root, "runtime.parallelism")?.max(1),
            channel: ChannelConfig::from_root(root)?,
            default_channel: root.string(&p("channel.default_kind"))?,
        })
    }
}
