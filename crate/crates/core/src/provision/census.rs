//! Hosts that are directories under the workspace: the mock cloud and the
//! local backend. Live hosts are tracked in a census file so teardown works
//! from a later process.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ConfigValue;
use crate::channel::{Channel, ChannelConfig};
use crate::config::{ConfigError, ConfigRoot};

use super::spec::{BackendKind, FleetSpec, Slot, count};
use super::{Backend, HostRecord, MODULE};

#[derive(Debug, Default, Serialize, Deserialize)]
struct Census {
    #[serde(default)]
    hosts: Vec<CensusHost>,
    /// Injected destroy refusals already spent, by instance id.
    #[serde(default)]
    refusals_used: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CensusHost {
    instance_id: String,
    category: String,
    index: usize,
    ordinal: usize,
    public_ip: String,
    private_ip: String,
    host_dir: String,
    created_at: String,
}

#[derive(Debug, Clone)]
enum Addressing {
    Loopback,
    Synthetic {
        public_prefix: String,
        private_prefix: String,
        first_public: usize,
        first_private: usize,
    },
}

/// Injected faults, keyed by host ordinal within one provisioning call.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    pub create: BTreeSet<usize>,
    pub probe: BTreeSet<usize>,
    pub destroy_refusals: BTreeMap<usize, usize>,
}

pub(super) struct DirectoryHosts {
    kind: BackendKind,
    workdir: PathBuf,
    hosts_dir: String,
    state_file: PathBuf,
    channel: ChannelConfig,
    addressing: Addressing,
    faults: Faults,
    max_hosts: Option<usize>,
    lock: Mutex<()>,
}

pub const MOCK_STATE_FILE: &str = "mock_cloud_state.yml";
pub const LOCAL_STATE_FILE: &str = "local_hosts_state.yml";

fn ordinals(root: &ConfigRoot, path: &str) -> Result<BTreeSet<usize>, ConfigError> {
    match root.value(path)? {
        ConfigValue::Seq(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_i64()
                    .and_then(|n| usize::try_from(n).ok())
                    .ok_or_else(|| ConfigError::Type {
                        path: format!("{path}.{i}"),
                        expected: "a host ordinal",
                        found: v.kind(),
                    })
            })
            .collect(),
        other => Err(ConfigError::Type {
            path: path.into(),
            expected: "a sequence",
            found: other.kind(),
        }),
    }
}

fn refusals(root: &ConfigRoot, path: &str) -> Result<BTreeMap<usize, usize>, ConfigError> {
    let value = root.value(path)?;
    let map = value.as_map().ok_or_else(|| ConfigError::Type {
        path: path.into(),
        expected: "a mapping",
        found: value.kind(),
    })?;
    map.iter()
        .map(|(k, v)| {
            let bad = || ConfigError::Type {
                path: format!("{path}.{k}"),
                expected: "ordinal: count",
                found: v.kind(),
            };
            let ordinal = k.parse::<usize>().map_err(|_| bad())?;
            let n = v.as_i64().and_then(|n| usize::try_from(n).ok()).ok_or_else(bad)?;
            Ok((ordinal, n))
        })
        .collect()
}

impl DirectoryHosts {
    pub fn from_root(
        root: &ConfigRoot,
        kind: BackendKind,
        workdir: &Path,
        hosts_dir: String,
        channel: ChannelConfig,
    ) -> Result<Self, ConfigError> {
        let p = |k: &str| format!("{MODULE}.backend_params.{k}");
        let (addressing, faults, max_hosts, state) = match kind {
            BackendKind::MockCloud => (
                Addressing::Synthetic {
                    public_prefix: root.string(&p("public_prefix"))?,
                    private_prefix: root.string(&p("private_prefix"))?,
                    first_public: count(root, &p("first_public_octet"))?,
                    first_private: count(root, &p("first_private_octet"))?,
                },
                Faults {
                    create: ordinals(root, &p("faults.create"))?,
                    probe: ordinals(root, &p("faults.probe"))?,
                    destroy_refusals: refusals(root, &p("faults.destroy_refusals"))?,
                },
                Some(count(root, &p("max_hosts"))?),
                MOCK_STATE_FILE,
            ),
            _ => (Addressing::Loopback, Faults::default(), None, LOCAL_STATE_FILE),
        };
        Ok(DirectoryHosts {
            kind,
            workdir: workdir.to_owned(),
            hosts_dir,
            state_file: workdir.join(state),
            channel,
            addressing,
            faults,
            max_hosts,
            lock: Mutex::new(()),
        })
    }

    fn read(&self) -> Result<Census, String> {
        match fs::read_to_string(&self.state_file) {
            Ok(text) => serde_yaml::from_str(&text)
                .map_err(|e| format!("corrupt census {}: {e}", self.state_file.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Census::default()),
            Err(e) => Err(format!("cannot read {}: {e}", self.state_file.display())),
        }
    }

    fn write(&self, census: &Census) -> Result<(), String> {
        let text = serde_yaml::to_string(census).map_err(|e| e.to_string())?;
        let fail = |e: std::io::Error| format!("cannot write {}: {e}", self.state_file.display());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.workdir).map_err(fail)?;
        tmp.write_all(text.as_bytes()).map_err(fail)?;
        tmp.persist(&self.state_file).map_err(|e| fail(e.error))?;
        Ok(())
    }

    fn record(&self, host: &CensusHost) -> HostRecord {
        let dir = self.workdir.join(&host.host_dir);
        HostRecord {
            category: host.category.clone(),
            index: host.index,
            public_ip: host.public_ip.clone(),
            private_ip: host.private_ip.clone(),
            instance_id: host.instance_id.clone(),
            host_dir: Some(PathBuf::from(&host.host_dir)),
            channel: Channel::local(format!("{}.{}", host.category, host.index), dir, self.channel.clone()),
        }
    }

    fn addresses(&self, ordinal: usize) -> (String, String) {
        match &self.addressing {
            Addressing::Loopback => ("127.0.0.1".into(), "127.0.0.1".into()),
            Addressing::Synthetic {
                public_prefix,
                private_prefix,
                first_public,
                first_private,
            } => (
                format!("{public_prefix}{}", first_public + ordinal),
                format!("{private_prefix}{}", first_private + ordinal),
            ),
        }
    }
}

impl Backend for DirectoryHosts {
    fn live(&self) -> Result<Vec<HostRecord>, String> {
        let _guard = self.lock.lock().unwrap();
        Ok(self.read()?.hosts.iter().map(|h| self.record(h)).collect())
    }

    fn check_capacity(&self, spec: &FleetSpec) -> Result<(), String> {
        let total = spec.total();
        if let Some(max) = self.max_hosts {
            if total > max {
                return Err(format!("{total} hosts requested, backend capacity is {max}"));
            }
        }
        if let Addressing::Synthetic {
            first_public,
            first_private,
            ..
        } = &self.addressing
        {
            if first_public.max(first_private) + total > 255 {
                return Err(format!("address range cannot hold {total} hosts"));
            }
        }
        Ok(())
    }

    fn create(&self, slot: &Slot) -> Result<HostRecord, String> {
        if self.faults.create.contains(&slot.ordinal) {
            return Err(format!("backend refused to create {} (injected fault)", slot.label()));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let instance_id = match self.kind {
            BackendKind::MockCloud => format!("i-{}", &id[..17]),
            _ => format!("local-{}", &id[..12]),
        };
        let host_dir = format!("{}/{}-{}", self.hosts_dir, slot.label(), &id[..8]);
        let (public_ip, private_ip) = self.addresses(slot.ordinal);
        let host = CensusHost {
            instance_id,
            category: slot.category.clone(),
            index: slot.index,
            ordinal: slot.ordinal,
            public_ip,
            private_ip,
            host_dir,
            created_at: crate::clock::format(&crate::clock::now()),
        };
        let _guard = self.lock.lock().unwrap();
        let mut census = self.read()?;
        census.hosts.push(host.clone());
        self.write(&census)?;
        // An unreachable host exists in the census but has no working directory.
        if !self.faults.probe.contains(&slot.ordinal) {
            let dir = self.workdir.join(&host.host_dir);
            fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        }
        Ok(self.record(&host))
    }

    fn destroy(&self, host: &HostRecord) -> Result<(), String> {
        let _guard = self.lock.lock().unwrap();
        let mut census = self.read()?;
        let Some(pos) = census.hosts.iter().position(|h| h.instance_id == host.instance_id) else {
            return Ok(());
        };
        let entry = census.hosts[pos].clone();
        let allowed = self.faults.destroy_refusals.get(&entry.ordinal).copied().unwrap_or(0);
        let used = census.refusals_used.entry(entry.instance_id.clone()).or_insert(0);
        if *used < allowed {
            *used += 1;
            self.write(&census)?;
            return Err(format!("backend refused to destroy {} (injected fault)", host.label()));
        }
        let dir = self.workdir.join(&entry.host_dir);
        match fs::remove_dir_all(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(format!("cannot remove {}: {e}", dir.display())),
        }
        census.hosts.remove(pos);
        census.refusals_used.remove(&entry.instance_id);
        self.write(&census)
    }
}
