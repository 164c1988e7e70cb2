use std::io::Write;
use std::path::{Path, PathBuf};

use super::error::ConfigError;
use super::render::{RenderFormat, render_value};
use super::value::ConfigValue;

/// Machine-generated facts a module publishes for later stages, stored as
/// `<module>.out.yml` and visible under `<module>.out`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutDocument {
    pub module: String,
    pub body: ConfigValue,
}

impl OutDocument {
    pub fn new(module: impl Into<String>, body: ConfigValue) -> Self {
        OutDocument {
            module: module.into(),
            body,
        }
    }

    pub fn file_name(&self) -> String {
        out_file_name(&self.module)
    }
}

pub fn out_file_name(module: &str) -> String {
    format!("{module}.out.yml")
}

/// Atomically replaces `<module>.out.yml` in `dir`.
pub fn write_out(dir: &Path, doc: &OutDocument) -> Result<PathBuf, ConfigError> {
    if doc.module.is_empty() || doc.module.contains(['.', '/', '\\']) {
        return Err(ConfigError::Contract {
            module: doc.module.clone(),
            message: "invalid module name".into(),
        });
    }
    if doc.body.as_map().is_none() {
        return Err(ConfigError::Contract {
            module: doc.module.clone(),
            message: format!("body must be a mapping, found {}", doc.body.kind()),
        });
    }
    if doc.body.any_text(&mut |t| t.contains("${")) {
        return Err(ConfigError::Contract {
            module: doc.module.clone(),
            message: "out-files hold concrete values only; found `${`".into(),
        });
    }
    let text = render_value(&doc.body, RenderFormat::Yaml).map_err(|message| ConfigError::Contract {
        module: doc.module.clone(),
        message,
    })?;
    let target = dir.join(doc.file_name());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ConfigError::io(dir, e))?;
    tmp.write_all(text.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| ConfigError::io(tmp.path().to_owned(), e))?;
    tmp.persist(&target)
        .map_err(|e| ConfigError::io(target.clone(), e.error))?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ConfigRoot, load_workspace};

    fn body(text: &str) -> ConfigValue {
        ConfigValue::from_yaml(serde_yaml::from_str(text).unwrap()).unwrap()
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let doc = OutDocument::new(
            "infrastructure_provisioning",
            body("mongod: [{public_ip: 10.2.0.1, private_ip: 10.2.0.100}]\n"),
        );
        write_out(dir.path(), &doc).unwrap();
        let root = load_workspace(dir.path()).unwrap();
        assert_eq!(
            root.string("infrastructure_provisioning.out.mongod.0.public_ip").unwrap(),
            "10.2.0.1"
        );
    }

    #[test]
    fn second_write_replaces_entirely() {
        let dir = tempfile::tempdir().unwrap();
        write_out(dir.path(), &OutDocument::new("m", body("a: 1\nb: 2\n"))).unwrap();
        write_out(dir.path(), &OutDocument::new("m", body("c: 3\n"))).unwrap();
        let root = ConfigRoot::load(dir.path(), ConfigValue::empty_map()).unwrap();
        assert_eq!(root.lookup("m.out.a").unwrap(), None);
        assert_eq!(root.integer("m.out.c").unwrap(), 3);
    }

    #[test]
    fn references_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_out(dir.path(), &OutDocument::new("m", body("a: '${x}'\n"))).unwrap_err();
        assert!(matches!(err, ConfigError::Contract { .. }));
        assert!(!dir.path().join("m.out.yml").exists());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let err = write_out(
            Path::new("/nonexistent/dsi/dir"),
            &OutDocument::new("m", body("a: 1\n")),
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }
}
