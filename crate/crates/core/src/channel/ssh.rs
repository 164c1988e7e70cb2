use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::{ChannelConfig, ChannelError, CommandResult, run_process};

/// Exit status ssh itself uses for connection failures.
const SSH_FAILURE: i32 = 255;

pub(crate) fn quote(word: &str) -> String {
    if !word.is_empty()
        && word
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./=:,@%+".contains(c))
    {
        word.to_owned()
    } else {
        format!("'{}'", word.replace('\'', r"'\''"))
    }
}

fn key_path(config: &ChannelConfig) -> String {
    match config.ssh_key_file.strip_prefix("~/") {
        Some(rest) => match std::env::var("HOME") {
            Ok(home) => format!("{home}/{rest}"),
            Err(_) => config.ssh_key_file.clone(),
        },
        None => config.ssh_key_file.clone(),
    }
}

fn options(config: &ChannelConfig) -> Vec<String> {
    vec![
        "-i".into(),
        key_path(config),
        "-o".into(),
        "BatchMode=yes".into(),
        "-o".into(),
        "StrictHostKeyChecking=no".into(),
        "-o".into(),
        format!("ConnectTimeout={}", config.connect_timeout.as_secs().max(1)),
    ]
}

fn destination(config: &ChannelConfig, address: &str) -> String {
    if config.ssh_user.is_empty() {
        address.to_owned()
    } else {
        format!("{}@{}", config.ssh_user, address)
    }
}

pub(crate) fn ssh_argv(address: &str, argv: &[String], config: &ChannelConfig) -> Vec<String> {
    let mut remote: Vec<String> = Vec::new();
    if !config.environment.is_empty() {
        remote.push("env".into());
        remote.extend(config.environment.iter().map(|(k, v)| quote(&format!("{k}={v}"))));
    }
    remote.extend(argv.iter().map(|a| quote(a)));
    let mut out = vec!["ssh".to_owned()];
    out.extend(options(config));
    out.push(destination(config, address));
    out.push("--".into());
    out.push(remote.join(" "));
    out
}

fn connect_error(host: &str, result: &CommandResult) -> ChannelError {
    ChannelError::Connect {
        host: host.to_owned(),
        message: result.stderr.trim().to_owned(),
    }
}

pub(super) fn run(
    host: &str,
    address: &str,
    argv: &[String],
    config: &ChannelConfig,
    timeout: Duration,
) -> Result<CommandResult, ChannelError> {
    let wrapped = ssh_argv(address, argv, config);
    let mut result = run_process(host, &wrapped, None, &BTreeMap::new(), timeout)?;
    if result.exit_code == SSH_FAILURE {
        return Err(connect_error(host, &result));
    }
    result.command = argv.join(" ");
    Ok(result)
}

fn scp(host: &str, config: &ChannelConfig, args: Vec<String>, path: &Path) -> Result<(), ChannelError> {
    let mut argv = vec!["scp".to_owned(), "-r".to_owned(), "-q".to_owned()];
    argv.extend(options(config));
    argv.extend(args);
    let result = run_process(host, &argv, None, &BTreeMap::new(), config.command_timeout)?;
    if result.success() {
        Ok(())
    } else {
        Err(ChannelError::Transfer {
            host: host.to_owned(),
            path: path.to_owned(),
            message: result.stderr.trim().to_owned(),
        })
    }
}

pub(super) fn upload(
    host: &str,
    address: &str,
    config: &ChannelConfig,
    local: &Path,
    remote: &str,
) -> Result<(), ChannelError> {
    if let Some(parent) = Path::new(remote).parent().filter(|p| !p.as_os_str().is_empty()) {
        let mkdir = vec!["mkdir".to_owned(), "-p".to_owned(), parent.to_string_lossy().into_owned()];
        let made = run(host, address, &mkdir, config, config.command_timeout)?;
        if !made.success() {
            return Err(ChannelError::Transfer {
                host: host.to_owned(),
                path: parent.to_owned(),
                message: made.stderr.trim().to_owned(),
            });
        }
    }
    let target = format!("{}:{}", destination(config, address), quote(remote));
    scp(host, config, vec![local.to_string_lossy().into_owned(), target], local)
}

pub(super) fn download(
    host: &str,
    address: &str,
    config: &ChannelConfig,
    remote: &str,
    local_dir: &Path,
) -> Result<Vec<PathBuf>, ChannelError> {
    // List matches first so an empty glob is an empty result, not an error.
    let list = format!("for f in {remote}; do [ -e \"$f\" ] && find \"$f\" -type f; done; true");
    let listed = run(host, address, &super::shell(&list), config, config.command_timeout)?;
    let mut copied = Vec::new();
    for file in listed.stdout.lines().filter(|l| !l.is_empty()) {
        let rel: PathBuf = Path::new(file)
            .components()
            .filter(|c| matches!(c, std::path::Component::Normal(_)))
            .collect();
        let target = local_dir.join(rel);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ChannelError::Transfer {
                host: host.to_owned(),
                path: parent.to_owned(),
                message: e.to_string(),
            })?;
        }
        let source = format!("{}:{}", destination(config, address), quote(file));
        scp(host, config, vec![source, target.to_string_lossy().into_owned()], &target)?;
        copied.push(target);
    }
    Ok(copied)
}
