use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MODULE, TaskReport, archive};
use crate::config::{ConfigError, ConfigRoot, STATE_SUFFIX};
use crate::parallel::fan_out;
use crate::provision::{FleetState, HostRecord};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// What was asked for: a file name, a log glob, a diagnostics command.
    pub name: String,
    /// Host label, or `control` for files from the workspace.
    pub source: String,
    /// Location inside the bundle.
    pub path: String,
    pub size: u64,
    pub sha256: String,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ArtifactBundle {
    pub archive: PathBuf,
    /// Unpacked copy of the archive contents.
    pub staging: PathBuf,
    pub manifest: Vec<ManifestEntry>,
}

impl ArtifactBundle {
    pub fn missing(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.iter().filter(|e| e.status == EntryStatus::Missing)
    }
}

pub(crate) fn entry(staging: &Path, file: &Path, name: &str, source: &str) -> std::io::Result<ManifestEntry> {
    let bytes = fs::read(file)?;
    Ok(ManifestEntry {
        name: name.into(),
        source: source.into(),
        path: bundle_path(staging, file),
        size: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
        status: EntryStatus::Ok,
        detail: None,
    })
}

fn bundle_path(staging: &Path, file: &Path) -> String {
    file.strip_prefix(staging)
        .unwrap_or(file)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn missing(name: &str, source: &str, path: String, detail: String) -> ManifestEntry {
    ManifestEntry {
        name: name.into(),
        source: source.into(),
        path,
        size: 0,
        sha256: String::new(),
        status: EntryStatus::Missing,
        detail: Some(detail),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ConfigError + '_ {
    move |e| ConfigError::io(path, e)
}

/// Which bundle directory a top-level workspace file belongs in.
fn workspace_folder(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".yml").or_else(|| name.strip_suffix(".yaml"))?;
    if stem.ends_with(".out") {
        Some("out")
    } else if stem.ends_with(STATE_SUFFIX) {
        Some("state")
    } else {
        Some("configs")
    }
}

fn copy_workspace_files(workdir: &Path, staging: &Path) -> Result<Vec<ManifestEntry>, ConfigError> {
    let mut names: Vec<String> = fs::read_dir(workdir)
        .map_err(io_err(workdir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .collect();
    names.sort();
    let mut entries = Vec::new();
    for name in names {
        let Some(folder) = workspace_folder(&name) else { continue };
        let target = staging.join(folder).join(&name);
        fs::create_dir_all(target.parent().unwrap()).map_err(io_err(&target))?;
        fs::copy(workdir.join(&name), &target).map_err(io_err(&target))?;
        entries.push(entry(staging, &target, &name, "control").map_err(io_err(&target))?);
    }
    Ok(entries)
}

fn diagnostics_text(command: &str, r: &crate::channel::CommandResult) -> String {
    format!(
        "$ {command}\nexit: {}\n--- stdout\n{}\n--- stderr\n{}\n",
        r.exit_code, r.stdout, r.stderr
    )
}

fn collect_host(host: &HostRecord, staging: &Path, globs: &[String], diagnostics: &[String]) -> Vec<ManifestEntry> {
    let label = host.label();
    let dest = staging.join("hosts").join(&label);
    let mut entries = Vec::new();
    for pattern in globs {
        match host.channel.download(pattern, &dest) {
            Ok(files) => {
                for file in files {
                    match entry(staging, &file, pattern, &label) {
                        Ok(e) => entries.push(e),
                        Err(e) => entries.push(missing(pattern, &label, bundle_path(staging, &file), e.to_string())),
                    }
                }
            }
            Err(e) => entries.push(missing(
                pattern,
                &label,
                format!("hosts/{label}/{pattern}"),
                e.to_string(),
            )),
        }
    }
    for (i, command) in diagnostics.iter().enumerate() {
        let file = dest.join("diagnostics").join(format!("{i:02}.txt"));
        let captured = host
            .channel
            .exec(command)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                fs::create_dir_all(file.parent().unwrap()).map_err(|e| e.to_string())?;
                fs::write(&file, diagnostics_text(command, &r)).map_err(|e| e.to_string())?;
                entry(staging, &file, command, &label).map_err(|e| e.to_string())
            });
        entries.push(captured.unwrap_or_else(|e| missing(command, &label, bundle_path(staging, &file), e)));
    }
    entries
}

fn write_tracked(
    staging: &Path,
    rel: &str,
    bytes: &[u8],
    name: &str,
    entries: &mut Vec<ManifestEntry>,
) -> Result<(), ConfigError> {
    let file = staging.join(rel);
    fs::create_dir_all(file.parent().unwrap()).map_err(io_err(&file))?;
    fs::write(&file, bytes).map_err(io_err(&file))?;
    entries.push(entry(staging, &file, name, "control").map_err(io_err(&file))?);
    Ok(())
}

/// Writes `manifest.json` into `staging`, sorting the entries by path.
pub fn write_manifest(staging: &Path, entries: &mut [ManifestEntry]) -> Result<(), ConfigError> {
    entries.sort_by(|a, b| (&a.path, &a.source, &a.name).cmp(&(&b.path, &b.source, &b.name)));
    let file = staging.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(entries).expect("manifest serializes");
    fs::write(&file, json).map_err(io_err(&file))
}

/// Gathers workspace configs and out-files, host logs and diagnostics,
/// per-test output and the results document into the staging directory,
/// then packs it. Failures to fetch individual files are recorded in the
/// manifest as missing.
pub fn collect_artifacts(root: &ConfigRoot, fleet: &FleetState, report: &TaskReport) -> Result<ArtifactBundle, ConfigError> {
    let workdir = root
        .dir()
        .ok_or_else(|| ConfigError::Invalid("artifact collection needs a workspace directory".into()))?;
    let staging = workdir.join(root.string("runtime.artifact_dir")?);
    let archive_path = workdir.join(root.string("runtime.archive_name")?);
    let results_name = root.string("runtime.results_file")?;
    let globs = root.strings(&format!("{MODULE}.collect.log_globs"))?;
    let diagnostics = root.strings(&format!("{MODULE}.collect.diagnostics"))?;
    let parallelism = root.integer("runtime.parallelism")?.max(1) as usize;

    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    let mut manifest = copy_workspace_files(workdir, &staging)?;
    let per_host = fan_out(&fleet.hosts, parallelism, |h| collect_host(h, &staging, &globs, &diagnostics));
    manifest.extend(per_host.into_iter().flatten());

    for outcome in &report.tests {
        let (stdout, stderr) = outcome
            .result
            .as_ref()
            .map(|r| (r.stdout.as_str(), r.stderr.as_str()))
            .unwrap_or_default();
        let dir = format!("tests/{}", outcome.id);
        write_tracked(&staging, &format!("{dir}/stdout.txt"), stdout.as_bytes(), "stdout", &mut manifest)?;
        write_tracked(&staging, &format!("{dir}/stderr.txt"), stderr.as_bytes(), "stderr", &mut manifest)?;
    }

    let results = serde_json::to_vec_pretty(report).expect("results serialize");
    let results_file = workdir.join(&results_name);
    fs::write(&results_file, &results).map_err(io_err(&results_file))?;
    write_tracked(&staging, &results_name, &results, &results_name, &mut manifest)?;

    write_manifest(&staging, &mut manifest)?;
    archive::pack(&staging, &archive_path).map_err(io_err(&archive_path))?;
    log::info!(
        "collected {} files into {} ({} missing)",
        manifest.len(),
        archive_path.display(),
        manifest.iter().filter(|e| e.status == EntryStatus::Missing).count()
    );
    Ok(ArtifactBundle {
        archive: archive_path,
        staging,
        manifest,
    })
}
