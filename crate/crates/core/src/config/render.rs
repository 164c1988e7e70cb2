use std::fmt::Write as _;
use std::str::FromStr;

use super::error::ConfigError;
use super::path::ConfigPath;
use super::root::ConfigRoot;
use super::value::ConfigValue;

/// Output formats for handing a config sub-tree to an external program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Yaml,
    Json,
    /// `key=value` lines, for Java-style workload files.
    Properties,
}

impl FromStr for RenderFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yaml" | "yml" => Ok(RenderFormat::Yaml),
            "json" => Ok(RenderFormat::Json),
            "properties" => Ok(RenderFormat::Properties),
            other => Err(ConfigError::Invalid(format!("unknown render format `{other}`"))),
        }
    }
}

/// Resolves `path` and serializes it.
pub fn render_external(
    root: &ConfigRoot,
    path: &ConfigPath,
    format: RenderFormat,
) -> Result<String, ConfigError> {
    let value = root.get(path)?;
    render_value(&value, format).map_err(|message| ConfigError::Shape {
        path: path.to_string(),
        message,
    })
}

/// Serializes an already resolved value.
pub fn render_value(value: &ConfigValue, format: RenderFormat) -> Result<String, String> {
    match format {
        RenderFormat::Yaml => serde_yaml::to_string(&value.to_yaml()).map_err(|e| e.to_string()),
        RenderFormat::Json => {
            let json = value
                .to_json()
                .ok_or_else(|| "non-finite float has no JSON form".to_owned())?;
            serde_json::to_string_pretty(&json).map_err(|e| e.to_string())
        }
        RenderFormat::Properties => {
            let map = value
                .as_map()
                .ok_or_else(|| format!("properties need a mapping, found {}", value.kind()))?;
            let mut text = String::new();
            for (k, v) in map {
                let scalar = v
                    .scalar_text()
                    .ok_or_else(|| format!("properties need a flat mapping; `{k}` is a {}", v.kind()))?;
                let _ = writeln!(text, "{k}={scalar}");
            }
            Ok(text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn root_with(ns: &str, text: &str) -> ConfigRoot {
        let tree = ConfigValue::from_yaml(serde_yaml::from_str(text).unwrap()).unwrap();
        let mut user = IndexMap::new();
        user.insert(ns.to_owned(), tree);
        ConfigRoot::from_trees(user, IndexMap::new(), ConfigValue::empty_map()).unwrap()
    }

    #[test]
    fn embedded_mongod_config_renders_as_yaml() {
        let root = root_with(
            "mongodb_setup",
            "mongod_config_file:\n  storage:\n    engine: wiredTiger\n  replication:\n    replSetName: rs0\n",
        );
        let text = render_external(
            &root,
            &ConfigPath::parse("mongodb_setup.mongod_config_file").unwrap(),
            RenderFormat::Yaml,
        )
        .unwrap();
        assert_eq!(
            text,
            "storage:\n  engine: wiredTiger\nreplication:\n  replSetName: rs0\n"
        );
    }

    #[test]
    fn empty_mapping_as_json() {
        assert_eq!(render_value(&ConfigValue::empty_map(), RenderFormat::Json).unwrap(), "{}");
    }

    #[test]
    fn flat_mapping_as_properties() {
        let root = root_with("w", "cfg: {recordcount: 5000000}\n");
        let text = render_external(&root, &ConfigPath::parse("w.cfg").unwrap(), RenderFormat::Properties)
            .unwrap();
        assert_eq!(text, "recordcount=5000000\n");
    }

    #[test]
    fn nested_mapping_as_properties_is_a_shape_error() {
        let root = root_with("w", "cfg: {a: {b: 1}}\n");
        let err = render_external(&root, &ConfigPath::parse("w.cfg").unwrap(), RenderFormat::Properties)
            .unwrap_err();
        assert!(matches!(err, ConfigError::Shape { .. }));
    }

    #[test]
    fn json_keeps_source_key_order() {
        let root = root_with("w", "cfg: {zeta: 1, alpha: [true, null], mid: 'x'}\n");
        let path = ConfigPath::parse("w.cfg").unwrap();
        let text = render_external(&root, &path, RenderFormat::Json).unwrap();
        assert_eq!(
            text,
            "{\n  \"zeta\": 1,\n  \"alpha\": [\n    true,\n    null\n  ],\n  \"mid\": \"x\"\n}"
        );
    }
}
