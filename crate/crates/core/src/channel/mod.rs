//! Remote execution and file transfer over hosts.
//!
//! A [`Channel`] is a cheap, clonable handle. Operations through one handle
//! are serialized; handles for different hosts run concurrently.

mod local;
mod process;
mod ssh;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, Timestamp};
use crate::config::{ConfigError, ConfigRoot};

pub use process::run_process;

/// Outcome of one command. A nonzero exit is a result, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandResult {
    pub command: String,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Seconds.
    pub duration: f64,
    #[serde(with = "ts_serde")]
    pub started_at: Timestamp,
}

impl CommandResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }

    pub fn ended_at(&self) -> Timestamp {
        self.started_at + chrono::Duration::nanoseconds((self.duration * 1e9) as i64)
    }
}

pub(crate) mod ts_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::clock::{self, Timestamp};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&clock::format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let text = String::deserialize(d)?;
        clock::parse(&text).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {text}")))
    }
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("cannot reach host {host}: {message}")]
    Connect { host: String, message: String },
    #[error("command on {host} timed out after {:.1}s: {}", partial.duration, partial.command)]
    Timeout {
        host: String,
        partial: Box<CommandResult>,
    },
    #[error("cannot start `{command}` on {host}: {source}")]
    Spawn {
        host: String,
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transfer of {} on {host} failed: {message}", path.display())]
    Transfer {
        host: String,
        path: PathBuf,
        message: String,
    },
}

/// Connection settings shared by every channel of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub ssh_key_file: String,
    pub ssh_user: String,
    pub connect_timeout: Duration,
    pub command_timeout: Duration,
    pub environment: BTreeMap<String, String>,
}

/// Where the single credential reference lives.
pub const CREDENTIAL_PATH: &str = "infrastructure_provisioning.channel.ssh_key_file";

impl ChannelConfig {
    pub fn from_root(root: &ConfigRoot) -> Result<Self, ConfigError> {
        check_single_credential(root)?;
        let environment = match root.value("runtime.environment")? {
            crate::ConfigValue::Map(m) => m
                .into_iter()
                .map(|(k, v)| {
                    let text = v.scalar_text().ok_or_else(|| ConfigError::Type {
                        path: format!("runtime.environment.{k}"),
                        expected: "a scalar",
                        found: v.kind(),
                    })?;
                    Ok((k, text))
                })
                .collect::<Result<_, ConfigError>>()?,
            other => {
                return Err(ConfigError::Type {
                    path: "runtime.environment".into(),
                    expected: "a mapping",
                    found: other.kind(),
                });
            }
        };
        Ok(ChannelConfig {
            ssh_key_file: root.string(CREDENTIAL_PATH)?,
            ssh_user: root.string("infrastructure_provisioning.channel.ssh_user")?,
            connect_timeout: seconds(root.float("infrastructure_provisioning.channel.connect_timeout_seconds")?),
            command_timeout: seconds(root.float("infrastructure_provisioning.channel.command_timeout_seconds")?),
            environment,
        })
    }

    /// Settings for tests and local tooling.
    pub fn local_defaults() -> Self {
        ChannelConfig {
            ssh_key_file: String::new(),
            ssh_user: String::new(),
            connect_timeout: Duration::from_secs(30),
            command_timeout: Duration::from_secs(600),
            environment: BTreeMap::new(),
        }
    }
}

pub fn seconds(value: f64) -> Duration {
    Duration::from_secs_f64(value.max(0.0))
}

/// Every user-supplied key named `ssh_key_file` must be the canonical one.
fn check_single_credential(root: &ConfigRoot) -> Result<(), ConfigError> {
    let extra: Vec<String> = root
        .leaf_paths()
        .into_iter()
        .map(|p| p.to_string())
        .filter(|p| p.ends_with("ssh_key_file") && p != CREDENTIAL_PATH)
        .collect();
    if extra.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "the ssh credential must be configured only at `{CREDENTIAL_PATH}`; also found {}",
            extra.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelKind {
    /// Local subprocesses, working directory `root`.
    Local { root: PathBuf },
    /// Secure shell to `address` with the configured credential.
    Ssh { address: String },
}

#[derive(Debug)]
struct Inner {
    label: String,
    kind: ChannelKind,
    config: ChannelConfig,
    serial: Mutex<()>,
}

/// Handle for running commands and moving files on one host.
#[derive(Debug, Clone)]
pub struct Channel {
    inner: Arc<Inner>,
}

impl PartialEq for Channel {
    fn eq(&self, other: &Self) -> bool {
        self.inner.label == other.inner.label && self.inner.kind == other.inner.kind
    }
}

impl Channel {
    pub fn new(label: impl Into<String>, kind: ChannelKind, config: ChannelConfig) -> Self {
        Channel {
            inner: Arc::new(Inner {
                label: label.into(),
                kind,
                config,
                serial: Mutex::new(()),
            }),
        }
    }

    pub fn local(label: impl Into<String>, root: impl Into<PathBuf>, config: ChannelConfig) -> Self {
        Channel::new(label, ChannelKind::Local { root: root.into() }, config)
    }

    pub fn label(&self) -> &str {
        &self.inner.label
    }

    pub fn kind(&self) -> &ChannelKind {
        &self.inner.kind
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.inner.config
    }

    fn serial(&self) -> std::sync::MutexGuard<'_, ()> {
        self.inner.serial.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs an argument vector. Nonzero exits come back as results.
    pub fn run(&self, argv: &[String], timeout: Duration) -> Result<CommandResult, ChannelError> {
        let _guard = self.serial();
        match &self.inner.kind {
            ChannelKind::Local { root } => local::run(self.label(), root, argv, &self.inner.config, timeout),
            ChannelKind::Ssh { address } => ssh::run(self.label(), address, argv, &self.inner.config, timeout),
        }
    }

    /// Runs `command` under a non-interactive `sh -c`.
    pub fn run_shell(&self, command: &str, timeout: Duration) -> Result<CommandResult, ChannelError> {
        match self.run(&shell(command), timeout) {
            Ok(mut r) => {
                r.command = command.to_owned();
                Ok(r)
            }
            Err(ChannelError::Timeout { host, mut partial }) => {
                partial.command = command.to_owned();
                Err(ChannelError::Timeout { host, partial })
            }
            Err(e) => Err(e),
        }
    }

    /// [`run_shell`](Self::run_shell) with the configured command timeout.
    pub fn exec(&self, command: &str) -> Result<CommandResult, ChannelError> {
        self.run_shell(command, self.inner.config.command_timeout)
    }

    pub fn upload(&self, local: &Path, remote: &str) -> Result<(), ChannelError> {
        let _guard = self.serial();
        match &self.inner.kind {
            ChannelKind::Local { root } => local::upload(self.label(), root, local, remote),
            ChannelKind::Ssh { address } => ssh::upload(self.label(), address, &self.inner.config, local, remote),
        }
    }

    /// Copies every file matching `remote` (a path or glob, directories
    /// recursively) under `local_dir`, keeping paths relative to the host's
    /// working directory. No match is an empty list.
    pub fn download(&self, remote: &str, local_dir: &Path) -> Result<Vec<PathBuf>, ChannelError> {
        let _guard = self.serial();
        match &self.inner.kind {
            ChannelKind::Local { root } => local::download(self.label(), root, remote, local_dir),
            ChannelKind::Ssh { address } => {
                ssh::download(self.label(), address, &self.inner.config, remote, local_dir)
            }
        }
    }

    /// Writes `contents` to `remote` through a temporary local file.
    pub fn put_bytes(&self, contents: &[u8], remote: &str) -> Result<(), ChannelError> {
        let transfer = |message: String| ChannelError::Transfer {
            host: self.label().to_owned(),
            path: PathBuf::from(remote),
            message,
        };
        let mut tmp = tempfile::NamedTempFile::new().map_err(|e| transfer(e.to_string()))?;
        std::io::Write::write_all(&mut tmp, contents).map_err(|e| transfer(e.to_string()))?;
        self.upload(tmp.path(), remote)
    }

    /// Reads a single remote file.
    pub fn get_bytes(&self, remote: &str) -> Result<Vec<u8>, ChannelError> {
        let tmp = tempfile::tempdir().map_err(|e| ChannelError::Transfer {
            host: self.label().to_owned(),
            path: PathBuf::from(remote),
            message: e.to_string(),
        })?;
        let files = self.download(remote, tmp.path())?;
        let [file] = files.as_slice() else {
            return Err(ChannelError::Transfer {
                host: self.label().to_owned(),
                path: PathBuf::from(remote),
                message: format!("expected one file, found {}", files.len()),
            });
        };
        std::fs::read(file).map_err(|e| ChannelError::Transfer {
            host: self.label().to_owned(),
            path: file.clone(),
            message: e.to_string(),
        })
    }
}

pub fn shell(command: &str) -> Vec<String> {
    vec!["sh".to_owned(), "-c".to_owned(), command.to_owned()]
}

pub(crate) fn started() -> (Timestamp, std::time::Instant) {
    (clock::now(), std::time::Instant::now())
}
