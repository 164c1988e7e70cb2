//! Builds a workspace from canned per-module configurations named in
//! `bootstrap.yml`.
//!
//! ```yaml
//! infrastructure_provisioning: replica
//! mongodb_setup: replica
//! test_control: ycsb
//! overrides:
//!   test_control.run.0.cmd: ./bin/ycsb load mongodb -threads 16
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

use crate::ConfigValue;
use crate::config::{ConfigError, RenderFormat, parse_document, render_value};

pub const MODULE: &str = "bootstrap";
pub const SPEC_FILE: &str = "bootstrap.yml";
pub const OVERRIDES_KEY: &str = "overrides";

/// Modules a bootstrap file may select configurations for.
pub const MODULES: [&str; 5] = [
    "infrastructure_provisioning",
    "workload_setup",
    "mongodb_setup",
    "test_control",
    "analysis",
];

macro_rules! canned {
    ($($module:literal / $id:literal),* $(,)?) => {
        &[$(($module, $id, include_str!(concat!("../configurations/", $module, "/", $id, ".yml")))),*]
    };
}

/// The library compiled into the framework.
const BUNDLED: &[(&str, &str, &str)] = canned![
    "infrastructure_provisioning" / "replica",
    "infrastructure_provisioning" / "single",
    "infrastructure_provisioning" / "local",
    "workload_setup" / "common",
    "workload_setup" / "stub",
    "mongodb_setup" / "replica",
    "mongodb_setup" / "standalone",
    "mongodb_setup" / "stub_replica",
    "mongodb_setup" / "stub_standalone",
    "test_control" / "ycsb",
    "test_control" / "stub_ycsb",
    "analysis" / "common",
];

/// Where canned configurations come from: `<module>/<id>.yml` files.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigLibrary {
    Bundled,
    Directory(PathBuf),
}

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no canned {module} configuration `{id}`; available: {}", available.join(", "))]
    UnknownSelection {
        module: String,
        id: String,
        available: Vec<String>,
    },
    #[error("{} already exists with different contents; refusing to overwrite", path.display())]
    Conflict { path: PathBuf },
    #[error("override `{path}`: {message}")]
    Override { path: String, message: String },
}

impl ConfigLibrary {
    pub fn identifiers(&self, module: &str) -> Vec<String> {
        match self {
            ConfigLibrary::Bundled => {
                let mut ids: Vec<String> = BUNDLED
                    .iter()
                    .filter(|(m, _, _)| *m == module)
                    .map(|(_, id, _)| id.to_string())
                    .collect();
                ids.sort();
                ids
            }
            ConfigLibrary::Directory(dir) => {
                let mut ids: Vec<String> = fs::read_dir(dir.join(module))
                    .into_iter()
                    .flatten()
                    .filter_map(|e| e.ok())
                    .filter_map(|e| e.file_name().to_str()?.strip_suffix(".yml").map(str::to_owned))
                    .collect();
                ids.sort();
                ids
            }
        }
    }

    /// The file text and a label saying where it came from.
    pub fn read(&self, module: &str, id: &str) -> Result<(String, String), BootstrapError> {
        let unknown = || BootstrapError::UnknownSelection {
            module: module.into(),
            id: id.into(),
            available: self.identifiers(module),
        };
        let label = format!("configurations/{module}/{id}.yml");
        match self {
            ConfigLibrary::Bundled => BUNDLED
                .iter()
                .find(|(m, i, _)| *m == module && *i == id)
                .map(|(_, _, text)| (text.to_string(), label))
                .ok_or_else(unknown),
            ConfigLibrary::Directory(dir) => {
                if id.contains(['/', '\\']) || id.starts_with('.') {
                    return Err(unknown());
                }
                let path = dir.join(module).join(format!("{id}.yml"));
                match fs::read_to_string(&path) {
                    Ok(text) => Ok((text, path.display().to_string())),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(unknown()),
                    Err(e) => Err(ConfigError::io(path, e).into()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSpec {
    pub selections: IndexMap<String, String>,
    pub overrides: ConfigValue,
}

impl BootstrapSpec {
    pub fn parse(text: &str, file: &Path) -> Result<Self, ConfigError> {
        let doc = parse_document(text, file)?;
        let map = doc.as_map().expect("documents are mappings");
        let mut selections = IndexMap::new();
        let mut overrides = ConfigValue::empty_map();
        for (key, value) in map {
            if key == OVERRIDES_KEY {
                if !matches!(value, ConfigValue::Map(_) | ConfigValue::Null) {
                    return Err(ConfigError::Type {
                        path: format!("{MODULE}.{OVERRIDES_KEY}"),
                        expected: "a mapping",
                        found: value.kind(),
                    });
                }
                overrides = value.clone();
                continue;
            }
            if !MODULES.contains(&key.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "{}: `{key}` is not a module; expected one of {} or {OVERRIDES_KEY}",
                    file.display(),
                    MODULES.join(", ")
                )));
            }
            let id = value.scalar_text().filter(|_| value.is_scalar() && *value != ConfigValue::Null);
            let id = id.ok_or_else(|| ConfigError::Type {
                path: format!("{MODULE}.{key}"),
                expected: "a configuration name",
                found: value.kind(),
            })?;
            selections.insert(key.clone(), id);
        }
        Ok(BootstrapSpec { selections, overrides })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFile {
    pub path: PathBuf,
    /// Library file, `bootstrap.yml`, or `bootstrap.yml overrides`.
    pub source: String,
    pub overridden: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BootstrapReport {
    pub files: Vec<WrittenFile>,
}

/// Override leaves as (module, path below the module, value). Keys may be
/// nested mappings or dotted paths; a non-mapping value (or an empty
/// mapping) replaces whatever is at its path.
fn override_leaves(overrides: &ConfigValue) -> Vec<(Vec<String>, ConfigValue)> {
    fn walk(value: &ConfigValue, prefix: &mut Vec<String>, out: &mut Vec<(Vec<String>, ConfigValue)>) {
        match value {
            ConfigValue::Map(m) if !m.is_empty() => {
                for (k, v) in m {
                    let added: Vec<String> = k.split('.').map(str::to_owned).collect();
                    let n = added.len();
                    prefix.extend(added);
                    walk(v, prefix, out);
                    prefix.truncate(prefix.len() - n);
                }
            }
            _ if !prefix.is_empty() => out.push((prefix.clone(), value.clone())),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(overrides, &mut Vec::new(), &mut out);
    out
}

fn set_path(tree: &mut ConfigValue, path: &[String], value: ConfigValue) -> Result<(), String> {
    let Some((head, rest)) = path.split_first() else {
        *tree = value;
        return Ok(());
    };
    let child = match tree {
        ConfigValue::Map(m) => {
            if rest.is_empty() {
                m.insert(head.clone(), value);
                return Ok(());
            }
            m.entry(head.clone()).or_insert_with(ConfigValue::empty_map)
        }
        ConfigValue::Seq(items) => {
            let len = items.len();
            let i: usize = head.parse().map_err(|_| format!("`{head}` is not an index into a sequence"))?;
            items
                .get_mut(i)
                .ok_or_else(|| format!("index {i} is past the end of a {len}-element sequence"))?
        }
        other => return Err(format!("cannot descend into a {} at `{head}`", other.kind())),
    };
    set_path(child, rest, value)
}

/// Applies overrides to the library texts, keyed by module. Modules that
/// were not selected but are overridden start from an empty file.
fn patched(
    texts: &IndexMap<String, (String, String)>,
    overrides: &ConfigValue,
) -> Result<IndexMap<String, (String, String, bool)>, BootstrapError> {
    let mut out: IndexMap<String, (String, String, bool)> = texts
        .iter()
        .map(|(m, (text, source))| (m.clone(), (text.clone(), source.clone(), false)))
        .collect();
    let mut trees: IndexMap<String, ConfigValue> = IndexMap::new();
    for (path, value) in override_leaves(overrides) {
        let module = path[0].clone();
        let shown = path.join(".");
        if !MODULES.contains(&module.as_str()) && module != "runtime" {
            return Err(BootstrapError::Override {
                path: shown,
                message: format!("`{module}` is not a module"),
            });
        }
        if path.len() == 1 {
            return Err(BootstrapError::Override {
                path: shown,
                message: "overrides must name a key inside a module".into(),
            });
        }
        if !trees.contains_key(&module) {
            let tree = match texts.get(&module) {
                Some((text, source)) => parse_document(text, Path::new(source))?,
                None => ConfigValue::empty_map(),
            };
            trees.insert(module.clone(), tree);
        }
        set_path(&mut trees[&module], &path[1..], value).map_err(|message| BootstrapError::Override {
            path: shown,
            message,
        })?;
    }
    for (module, tree) in trees {
        let text = render_value(&tree, RenderFormat::Yaml).map_err(|message| BootstrapError::Override {
            path: module.clone(),
            message,
        })?;
        let source = match out.get(&module) {
            Some((_, source, _)) => format!("{source} + {SPEC_FILE} overrides"),
            None => format!("{SPEC_FILE} overrides"),
        };
        out.insert(module, (text, source, true));
    }
    Ok(out)
}

/// Copies the selected library files into `workdir`, applies overrides and
/// copies the spec file itself. Nothing is written if any target exists
/// with different contents.
pub fn bootstrap(spec_path: &Path, library: &ConfigLibrary, workdir: &Path) -> Result<BootstrapReport, BootstrapError> {
    let spec_text = fs::read_to_string(spec_path).map_err(|e| ConfigError::io(spec_path, e))?;
    let spec = BootstrapSpec::parse(&spec_text, spec_path)?;
    let mut texts = IndexMap::new();
    for (module, id) in &spec.selections {
        let (text, source) = library.read(module, id)?;
        parse_document(&text, Path::new(&source))?;
        texts.insert(module.clone(), (text, source));
    }
    let files = patched(&texts, &spec.overrides)?;

    let mut plan: Vec<(PathBuf, String, String, bool)> = files
        .into_iter()
        .map(|(module, (text, source, overridden))| (workdir.join(format!("{module}.yml")), text, source, overridden))
        .collect();
    plan.push((workdir.join(SPEC_FILE), spec_text, SPEC_FILE.into(), false));
    for (path, text, _, _) in &plan {
        for existing in [path.clone(), path.with_extension("yaml")] {
            match fs::read(&existing) {
                Ok(bytes) if existing == *path && bytes == text.as_bytes() => {}
                Ok(_) => return Err(BootstrapError::Conflict { path: existing }),
                Err(_) => {}
            }
        }
    }

    fs::create_dir_all(workdir).map_err(|e| ConfigError::io(workdir, e))?;
    let mut report = BootstrapReport::default();
    for (path, text, source, overridden) in plan {
        fs::write(&path, text).map_err(|e| ConfigError::io(&path, e))?;
        log::info!("wrote {} from {source}", path.display());
        report.files.push(WrittenFile { path, source, overridden });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_library_files_parse() {
        for (module, id, text) in BUNDLED {
            parse_document(text, Path::new(&format!("{module}/{id}.yml"))).unwrap();
        }
    }

    #[test]
    fn dotted_and_nested_override_keys_agree() {
        let yaml = |s: &str| ConfigValue::from_yaml(serde_yaml::from_str(s).unwrap()).unwrap();
        let dotted = override_leaves(&yaml("test_control.run.0.cmd: x\n"));
        let nested = override_leaves(&yaml("test_control: {run: {'0': {cmd: x}}}\n"));
        assert_eq!(dotted, nested);
        assert_eq!(dotted[0].0, ["test_control", "run", "0", "cmd"]);
    }
}
