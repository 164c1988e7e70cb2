use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use super::{ChannelConfig, ChannelError, CommandResult, run_process};

pub(super) fn run(
    host: &str,
    root: &Path,
    argv: &[String],
    config: &ChannelConfig,
    timeout: Duration,
) -> Result<CommandResult, ChannelError> {
    if !root.is_dir() {
        return Err(ChannelError::Connect {
            host: host.to_owned(),
            message: format!("host directory {} does not exist", root.display()),
        });
    }
    run_process(host, argv, Some(root), &config.environment, timeout)
}

/// Host-relative location of `remote`; absolute paths keep their components.
fn relative(remote: &str) -> PathBuf {
    Path::new(remote)
        .components()
        .filter(|c| matches!(c, Component::Normal(_)))
        .collect()
}

fn resolve(root: &Path, remote: &str) -> PathBuf {
    let p = Path::new(remote);
    if p.is_absolute() { p.to_owned() } else { root.join(p) }
}

fn transfer_error(host: &str, path: &Path, e: impl ToString) -> ChannelError {
    ChannelError::Transfer {
        host: host.to_owned(),
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub(super) fn upload(host: &str, root: &Path, local: &Path, remote: &str) -> Result<(), ChannelError> {
    if !root.is_dir() {
        return Err(ChannelError::Connect {
            host: host.to_owned(),
            message: format!("host directory {} does not exist", root.display()),
        });
    }
    let target = resolve(root, remote);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent).map_err(|e| transfer_error(host, parent, e))?;
    }
    fs::copy(local, &target).map_err(|e| transfer_error(host, local, e))?;
    Ok(())
}

pub(super) fn download(
    host: &str,
    root: &Path,
    remote: &str,
    local_dir: &Path,
) -> Result<Vec<PathBuf>, ChannelError> {
    if !root.is_dir() {
        return Err(ChannelError::Connect {
            host: host.to_owned(),
            message: format!("host directory {} does not exist", root.display()),
        });
    }
    let absolute = Path::new(remote).is_absolute();
    let pattern = if absolute {
        remote.to_owned()
    } else {
        format!("{}/{}", glob::Pattern::escape(&root.to_string_lossy()), remote)
    };
    let matches = glob::glob(&pattern).map_err(|e| transfer_error(host, Path::new(remote), e))?;
    let mut files = Vec::new();
    for entry in matches {
        let path = entry.map_err(|e| transfer_error(host, Path::new(remote), e))?;
        collect_files(&path, &mut files).map_err(|e| transfer_error(host, &path, e))?;
    }
    files.sort();
    files.dedup();
    let mut copied = Vec::with_capacity(files.len());
    for file in files {
        let rel = match file.strip_prefix(root) {
            Ok(r) if !absolute => r.to_owned(),
            _ => relative(&file.to_string_lossy()),
        };
        let target = local_dir.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| transfer_error(host, parent, e))?;
        }
        fs::copy(&file, &target).map_err(|e| transfer_error(host, &file, e))?;
        copied.push(target);
    }
    Ok(copied)
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let meta = fs::metadata(path)?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for entry in entries {
            collect_files(&entry, out)?;
        }
    } else if meta.is_file() {
        out.push(path.to_owned());
    }
    Ok(())
}
