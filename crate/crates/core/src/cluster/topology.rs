use indexmap::IndexMap;

use crate::ConfigValue;
use crate::config::{ConfigError, ConfigRoot};
use crate::provision::{FleetState, HostRecord};
use crate::template::Vars;

use super::MODULE;

/// Relative paths of one node's files on its host.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePaths {
    pub config_file: String,
    pub data_dir: String,
    pub log_file: String,
    pub stdout_file: String,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub cluster_id: String,
    pub cluster_type: String,
    pub role: String,
    pub index: usize,
    pub public_ip: String,
    pub private_ip: String,
    /// Address other nodes and clients use, per `member_address`.
    pub address: String,
    pub port: i64,
    pub detached: bool,
    /// Embedded config for the role with this node's overrides merged in.
    pub config: ConfigValue,
    pub host: HostRecord,
    pub paths: NodePaths,
}

impl Node {
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.address, self.port)
    }

    pub fn vars(&self) -> Vars {
        let parent = |p: &str| match p.rsplit_once('/') {
            Some((dir, _)) if !dir.is_empty() => dir.to_owned(),
            _ => ".".to_owned(),
        };
        Vars::new()
            .with("node_name", &self.name)
            .with("cluster_id", &self.cluster_id)
            .with("cluster_type", &self.cluster_type)
            .with("role", &self.role)
            .with("index", self.index)
            .with("host", &self.address)
            .with("public_ip", &self.public_ip)
            .with("private_ip", &self.private_ip)
            .with("port", self.port)
            .with("config_path", &self.paths.config_file)
            .with("data_dir", &self.paths.data_dir)
            .with("log_file", &self.paths.log_file)
            .with("log_dir", parent(&self.paths.log_file))
            .with("stdout_file", &self.paths.stdout_file)
            .with("stdout_dir", parent(&self.paths.stdout_file))
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: String,
    pub cluster_type: String,
    pub nodes: Vec<Node>,
}

impl Cluster {
    pub fn active<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.nodes.iter().filter(move |n| n.role == role && !n.detached)
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub clusters: Vec<Cluster>,
}

const CLUSTER_KEYS: [&str; 2] = ["cluster_type", "id"];

fn contract(message: impl Into<String>) -> ConfigError {
    ConfigError::Contract {
        module: MODULE.into(),
        message: message.into(),
    }
}

fn scalar(entry: &ConfigValue, key: &str) -> Option<String> {
    entry.get(key).and_then(ConfigValue::scalar_text)
}

fn find_host(fleet: &FleetState, entry: &ConfigValue, path: &str) -> Result<HostRecord, ConfigError> {
    if let Some(label) = scalar(entry, "host") {
        return fleet
            .hosts
            .iter()
            .find(|h| h.label() == label)
            .cloned()
            .ok_or_else(|| contract(format!("{path}.host `{label}` is not a provisioned host")));
    }
    for key in ["public_ip", "private_ip"] {
        let Some(address) = scalar(entry, key) else {
            continue;
        };
        let matches: Vec<&HostRecord> = fleet
            .hosts
            .iter()
            .filter(|h| h.public_ip == address || h.private_ip == address)
            .collect();
        match matches.as_slice() {
            [one] => return Ok((*one).clone()),
            [] => {}
            _ => {
                return Err(contract(format!(
                    "{path}.{key} {address} matches several hosts; name one with `host: <category>.<index>`"
                )));
            }
        }
    }
    Err(contract(format!("{path} does not correspond to any provisioned host")))
}

impl Topology {
    pub fn from_root(root: &ConfigRoot, fleet: &FleetState) -> Result<Self, ConfigError> {
        let path = format!("{MODULE}.topology");
        let value = root.value(&path)?;
        let clusters = value.as_seq().ok_or_else(|| ConfigError::Type {
            path: path.clone(),
            expected: "a sequence of clusters",
            found: value.kind(),
        })?;
        let init = root.value(&format!("{MODULE}.init"))?;
        let node_name = root.string(&format!("{MODULE}.node_name"))?;
        let default_port = root.integer(&format!("{MODULE}.default_port"))?;
        let member_address = root.string(&format!("{MODULE}.member_address"))?;
        if !matches!(member_address.as_str(), "private_ip" | "public_ip") {
            return Err(contract("member_address must be private_ip or public_ip"));
        }
        let path_templates: IndexMap<&str, String> = ["config_file", "data_dir", "log_file", "stdout_file"]
            .into_iter()
            .map(|k| Ok((k, root.string(&format!("{MODULE}.paths.{k}"))?)))
            .collect::<Result<_, ConfigError>>()?;

        let mut out = Vec::new();
        let mut names = std::collections::HashSet::new();
        for (ci, cluster) in clusters.iter().enumerate() {
            let cpath = format!("{path}.{ci}");
            let map = cluster.as_map().ok_or_else(|| contract(format!("{cpath} must be a mapping")))?;
            let cluster_type = scalar(cluster, "cluster_type")
                .ok_or_else(|| ConfigError::MissingKey { path: format!("{cpath}.cluster_type") })?;
            if init.get(&cluster_type).is_none() {
                return Err(contract(format!(
                    "{cpath}.cluster_type `{cluster_type}` has no entry under {MODULE}.init"
                )));
            }
            let id = scalar(cluster, "id").ok_or_else(|| ConfigError::MissingKey { path: format!("{cpath}.id") })?;
            let mut nodes = Vec::new();
            for (role, members) in map {
                if CLUSTER_KEYS.contains(&role.as_str()) {
                    continue;
                }
                let Some(members) = members.as_seq() else {
                    continue;
                };
                let shared = root
                    .lookup(&format!("{MODULE}.{role}_config_file"))?
                    .unwrap_or_else(ConfigValue::empty_map);
                for (index, entry) in members.iter().enumerate() {
                    let npath = format!("{cpath}.{role}.{index}");
                    if entry.as_map().is_none() {
                        return Err(contract(format!("{npath} must be a mapping")));
                    }
                    let host = find_host(fleet, entry, &npath)?;
                    let public_ip = scalar(entry, "public_ip").unwrap_or_else(|| host.public_ip.clone());
                    let private_ip = scalar(entry, "private_ip").unwrap_or_else(|| host.private_ip.clone());
                    let address = if member_address == "private_ip" { &private_ip } else { &public_ip }.clone();
                    let port = match entry.get("port") {
                        None => default_port,
                        Some(p) => p.as_i64().ok_or_else(|| ConfigError::Type {
                            path: format!("{npath}.port"),
                            expected: "an integer",
                            found: p.kind(),
                        })?,
                    };
                    let detached = match entry.get("detached") {
                        None => false,
                        Some(d) => d.as_bool().ok_or_else(|| ConfigError::Type {
                            path: format!("{npath}.detached"),
                            expected: "a boolean",
                            found: d.kind(),
                        })?,
                    };
                    let config = match entry.get("config_file") {
                        None => shared.clone(),
                        Some(over @ ConfigValue::Map(_)) => over.overlay(&shared),
                        Some(other) => {
                            return Err(ConfigError::Type {
                                path: format!("{npath}.config_file"),
                                expected: "a mapping",
                                found: other.kind(),
                            });
                        }
                    };
                    let base = Vars::new()
                        .with("cluster_id", &id)
                        .with("role", role)
                        .with("index", index);
                    let name = base.expand(&node_name).map_err(|e| contract(e.to_string()))?;
                    if !names.insert(name.clone()) {
                        return Err(contract(format!("node name `{name}` is used twice")));
                    }
                    let vars = base.with("node_name", &name);
                    let expand = |k: &str| vars.expand(&path_templates[k]).map_err(|e| contract(e.to_string()));
                    nodes.push(Node {
                        paths: NodePaths {
                            config_file: expand("config_file")?,
                            data_dir: expand("data_dir")?,
                            log_file: expand("log_file")?,
                            stdout_file: expand("stdout_file")?,
                        },
                        name,
                        cluster_id: id.clone(),
                        cluster_type: cluster_type.clone(),
                        role: role.clone(),
                        index,
                        public_ip,
                        private_ip,
                        address,
                        port,
                        detached,
                        config,
                        host,
                    });
                }
            }
            out.push(Cluster {
                id,
                cluster_type,
                nodes,
            });
        }
        Ok(Topology { clusters: out })
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.clusters.iter().flat_map(|c| c.nodes.iter())
    }
}
