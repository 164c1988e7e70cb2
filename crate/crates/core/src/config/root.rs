use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use indexmap::IndexMap;

use super::error::ConfigError;
use super::path::{ConfigPath, Segment};
use super::reference::{self, Piece, Template};
use super::value::ConfigValue;

/// Longest chain of references followed before giving up.
pub const MAX_REFERENCE_DEPTH: usize = 64;

const BUNDLED_DEFAULTS: &str = include_str!("../../defaults.yml");

/// The framework's `defaults.yml`, parsed once.
pub fn bundled_defaults() -> &'static ConfigValue {
    static DEFAULTS: OnceLock<ConfigValue> = OnceLock::new();
    DEFAULTS.get_or_init(|| {
        parse_document(BUNDLED_DEFAULTS, Path::new("defaults.yml"))
            .expect("bundled defaults.yml must parse")
    })
}

/// Which layer supplied a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    OutFile(PathBuf),
    UserFile(PathBuf),
    Defaults,
}

/// Every configuration file of a workspace as one namespace.
///
/// Lookups go out-file, then user file, then defaults. Mappings present in
/// several layers are merged key by key; a loaded root never changes.
#[derive(Debug, Clone)]
pub struct ConfigRoot {
    dir: Option<PathBuf>,
    user: IndexMap<String, ConfigValue>,
    user_files: IndexMap<String, PathBuf>,
    out: IndexMap<String, ConfigValue>,
    out_files: IndexMap<String, PathBuf>,
    defaults: ConfigValue,
    merged: ConfigValue,
    dangling: Vec<(String, String)>,
}

/// Loads a workspace directory with the bundled defaults.
pub fn load_workspace(dir: impl AsRef<Path>) -> Result<ConfigRoot, ConfigError> {
    ConfigRoot::load(dir, bundled_defaults().clone())
}

pub(crate) fn parse_document(text: &str, file: &Path) -> Result<ConfigValue, ConfigError> {
    let raw: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
        file: file.to_owned(),
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    let value = ConfigValue::from_yaml(raw).map_err(|e| ConfigError::Parse {
        file: file.to_owned(),
        line: None,
        message: e.to_string(),
    })?;
    match value {
        ConfigValue::Null => Ok(ConfigValue::empty_map()),
        ConfigValue::Map(_) => Ok(value),
        _ => Err(ConfigError::NotAMapping {
            file: file.to_owned(),
        }),
    }
}

pub(crate) fn read_document(file: &Path) -> Result<ConfigValue, ConfigError> {
    let text = fs::read_to_string(file).map_err(|e| ConfigError::io(file, e))?;
    parse_document(&text, file)
}

/// Framework bookkeeping files such as `mock_cloud_state.yml` end with this
/// and are never configuration.
pub const STATE_SUFFIX: &str = "_state";

/// Namespace and out-flag for a workspace file name, if it is a config file.
pub(crate) fn classify_file(name: &str) -> Option<(String, bool)> {
    if name.starts_with('.') {
        return None;
    }
    let stem_name = name.rsplit_once('.').map_or(name, |(s, _)| s);
    if stem_name.ends_with(STATE_SUFFIX) {
        return None;
    }
    let stem = name
        .strip_suffix(".yml")
        .or_else(|| name.strip_suffix(".yaml"))?;
    let (namespace, is_out) = match stem.strip_suffix(".out") {
        Some(module) => (module, true),
        None => (stem, false),
    };
    if namespace.is_empty() || namespace.contains('.') || ConfigPath::parse(namespace).is_err() {
        return None;
    }
    Some((namespace.to_owned(), is_out))
}

impl ConfigRoot {
    pub fn load(dir: impl AsRef<Path>, defaults: ConfigValue) -> Result<Self, ConfigError> {
        let dir = dir.as_ref();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| ConfigError::io(dir, e))?
            .filter_map(|entry| entry.ok())
            .filter(|entry| entry.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|entry| entry.path())
            .collect();
        entries.sort();

        let mut user = IndexMap::new();
        let mut user_files: IndexMap<String, PathBuf> = IndexMap::new();
        let mut out = IndexMap::new();
        let mut out_files: IndexMap<String, PathBuf> = IndexMap::new();
        for file in entries {
            let Some(name) = file.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some((namespace, is_out)) = classify_file(name) else {
                continue;
            };
            let (trees, files) = if is_out {
                (&mut out, &mut out_files)
            } else {
                (&mut user, &mut user_files)
            };
            if let Some(previous) = files.get(&namespace) {
                return Err(ConfigError::Ambiguous {
                    namespace: if is_out { format!("{namespace}.out") } else { namespace },
                    files: vec![previous.clone(), file.clone()],
                });
            }
            let tree = read_document(&file)?;
            trees.insert(namespace.clone(), tree);
            files.insert(namespace, file);
        }
        let mut root = ConfigRoot {
            dir: Some(dir.to_owned()),
            user,
            user_files,
            out,
            out_files,
            defaults,
            merged: ConfigValue::empty_map(),
            dangling: Vec::new(),
        };
        root.build()?;
        Ok(root)
    }

    /// Builds a root from in-memory trees, as if each were a workspace file.
    pub fn from_trees(
        user: IndexMap<String, ConfigValue>,
        out: IndexMap<String, ConfigValue>,
        defaults: ConfigValue,
    ) -> Result<Self, ConfigError> {
        let mut root = ConfigRoot {
            dir: None,
            user,
            user_files: IndexMap::new(),
            out,
            out_files: IndexMap::new(),
            defaults,
            merged: ConfigValue::empty_map(),
            dangling: Vec::new(),
        };
        root.build()?;
        Ok(root)
    }

    /// Loads the same directory again, picking up out-files written since.
    pub fn reload(&self) -> Result<Self, ConfigError> {
        match &self.dir {
            Some(dir) => ConfigRoot::load(dir, self.defaults.clone()),
            None => Ok(self.clone()),
        }
    }

    fn build(&mut self) -> Result<(), ConfigError> {
        let user_layer = ConfigValue::Map(self.user.clone());
        let out_layer = ConfigValue::Map(
            self.out
                .iter()
                .map(|(module, tree)| {
                    let mut wrapper = IndexMap::new();
                    wrapper.insert("out".to_owned(), escape_tree(tree));
                    (module.clone(), ConfigValue::Map(wrapper))
                })
                .collect(),
        );
        let base = user_layer.overlay(&self.defaults);
        // Out trees win on conflicts but user key order is kept.
        self.merged = overlay_keep_order(&out_layer, &base);
        self.validate()
    }

    /// Eager structural check: key interpolation, malformed and cyclic
    /// references fail the load; dangling references are only recorded.
    fn validate(&mut self) -> Result<(), ConfigError> {
        let mut scalars = Vec::new();
        collect_reference_scalars(&self.merged, None, &mut scalars)?;
        let mut resolver = Resolver::new(&self.merged);
        for path in scalars {
            match resolver.resolve_at(&path) {
                Ok(_) => {}
                Err(ConfigError::DanglingReference { from, to }) => self.dangling.push((from, to)),
                Err(ConfigError::MissingKey { path: to }) => {
                    self.dangling.push((path.to_string(), to))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// The fully resolved value at `path`.
    pub fn get(&self, path: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        Resolver::new(&self.merged).get(path)
    }

    /// [`get`](Self::get) with a dotted path string.
    pub fn value(&self, path: &str) -> Result<ConfigValue, ConfigError> {
        self.get(&ConfigPath::parse(path)?)
    }

    /// Like [`value`](Self::value) but an absent key is `None`. Dangling
    /// references beneath the key are still errors.
    pub fn lookup(&self, path: &str) -> Result<Option<ConfigValue>, ConfigError> {
        let parsed = ConfigPath::parse(path)?;
        match self.get(&parsed) {
            Ok(v) => Ok(Some(v)),
            Err(ConfigError::MissingKey { path: missing }) if missing == parsed.to_string() => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn string(&self, path: &str) -> Result<String, ConfigError> {
        let v = self.value(path)?;
        match v {
            ConfigValue::String(s) => Ok(s),
            other => Err(type_error(path, "a string", &other)),
        }
    }

    /// Scalars in their text form; useful for command templates.
    pub fn text(&self, path: &str) -> Result<String, ConfigError> {
        let v = self.value(path)?;
        v.scalar_text().ok_or_else(|| type_error(path, "a scalar", &v))
    }

    pub fn integer(&self, path: &str) -> Result<i64, ConfigError> {
        let v = self.value(path)?;
        v.as_i64().ok_or_else(|| type_error(path, "an integer", &v))
    }

    pub fn float(&self, path: &str) -> Result<f64, ConfigError> {
        let v = self.value(path)?;
        v.as_f64().ok_or_else(|| type_error(path, "a number", &v))
    }

    pub fn boolean(&self, path: &str) -> Result<bool, ConfigError> {
        let v = self.value(path)?;
        v.as_bool().ok_or_else(|| type_error(path, "a boolean", &v))
    }

    /// A sequence of scalars in their text form; null reads as empty.
    pub fn strings(&self, path: &str) -> Result<Vec<String>, ConfigError> {
        match self.value(path)? {
            ConfigValue::Seq(items) => items
                .iter()
                .enumerate()
                .map(|(i, v)| v.scalar_text().ok_or_else(|| type_error(&format!("{path}.{i}"), "a scalar", v)))
                .collect(),
            ConfigValue::Null => Ok(Vec::new()),
            other => Err(type_error(path, "a sequence", &other)),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// References whose target did not exist at load, as (from, to) pairs.
    pub fn dangling_references(&self) -> &[(String, String)] {
        &self.dangling
    }

    /// Namespaces supplied by user files, in file-name order.
    pub fn user_namespaces(&self) -> impl Iterator<Item = &str> {
        self.user.keys().map(String::as_str)
    }

    pub fn has_user_file(&self, namespace: &str) -> bool {
        self.user.contains_key(namespace)
    }

    pub fn has_out(&self, module: &str) -> bool {
        self.out.contains_key(module)
    }

    pub fn user_file(&self, namespace: &str) -> Option<&Path> {
        self.user_files.get(namespace).map(PathBuf::as_path)
    }

    pub fn out_file(&self, module: &str) -> Option<&Path> {
        self.out_files.get(module).map(PathBuf::as_path)
    }

    /// Every top-level namespace visible through the root.
    pub fn namespaces(&self) -> Vec<String> {
        self.merged
            .as_map()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Which layer supplies the raw value at `path`.
    pub fn provenance(&self, path: &ConfigPath) -> Option<Source> {
        let segs = path.segments();
        let module = path.namespace();
        if segs.len() >= 2 && segs[1] == Segment::Key("out".into()) {
            if let Some(tree) = self.out.get(module) {
                if raw_lookup(tree, &segs[2..]).is_some() {
                    let file = self.out_files.get(module).cloned().unwrap_or_default();
                    return Some(Source::OutFile(file));
                }
            }
        }
        if let Some(tree) = self.user.get(module) {
            if raw_lookup(tree, &segs[1..]).is_some() {
                let file = self.user_files.get(module).cloned().unwrap_or_default();
                return Some(Source::UserFile(file));
            }
        }
        raw_lookup(&self.defaults, segs).map(|_| Source::Defaults)
    }

    /// All leaf paths of the merged namespace, depth first.
    pub fn leaf_paths(&self) -> Vec<ConfigPath> {
        let mut out = Vec::new();
        collect_leaves(&self.merged, None, &mut out);
        out
    }
}

fn type_error(path: &str, expected: &'static str, found: &ConfigValue) -> ConfigError {
    ConfigError::Type {
        path: path.to_owned(),
        expected,
        found: found.kind(),
    }
}

fn overlay_keep_order(high: &ConfigValue, low: &ConfigValue) -> ConfigValue {
    match (high, low) {
        (ConfigValue::Map(h), ConfigValue::Map(l)) => {
            let mut merged = IndexMap::with_capacity(h.len() + l.len());
            for (k, lv) in l {
                let v = match h.get(k) {
                    Some(hv) => overlay_keep_order(hv, lv),
                    None => lv.clone(),
                };
                merged.insert(k.clone(), v);
            }
            for (k, hv) in h {
                if !merged.contains_key(k) {
                    merged.insert(k.clone(), hv.clone());
                }
            }
            ConfigValue::Map(merged)
        }
        (h, _) => h.clone(),
    }
}

fn escape_tree(value: &ConfigValue) -> ConfigValue {
    match value {
        ConfigValue::String(s) => ConfigValue::String(reference::escape(s)),
        ConfigValue::Seq(items) => ConfigValue::Seq(items.iter().map(escape_tree).collect()),
        ConfigValue::Map(m) => {
            ConfigValue::Map(m.iter().map(|(k, v)| (k.clone(), escape_tree(v))).collect())
        }
        other => other.clone(),
    }
}

fn child<'v>(value: &'v ConfigValue, segment: &Segment) -> Option<&'v ConfigValue> {
    match (value, segment) {
        (ConfigValue::Seq(items), Segment::Index(i)) => items.get(*i),
        (ConfigValue::Map(m), seg) => m.get(&seg.as_key()),
        _ => None,
    }
}

pub(crate) fn raw_lookup<'v>(value: &'v ConfigValue, segments: &[Segment]) -> Option<&'v ConfigValue> {
    segments.iter().try_fold(value, |cur, seg| child(cur, seg))
}

fn extend(prefix: Option<&ConfigPath>, segment: Segment) -> ConfigPath {
    match prefix {
        Some(p) => p.child(segment),
        None => ConfigPath::from_segments(vec![segment]).expect("non-empty"),
    }
}

fn collect_reference_scalars(
    value: &ConfigValue,
    at: Option<&ConfigPath>,
    out: &mut Vec<ConfigPath>,
) -> Result<(), ConfigError> {
    match value {
        ConfigValue::Map(m) => {
            for (k, v) in m {
                let path = extend(at, Segment::Key(k.clone()));
                if k.contains("${") {
                    return Err(ConfigError::KeyInterpolation {
                        path: path.to_string(),
                    });
                }
                collect_reference_scalars(v, Some(&path), out)?;
            }
        }
        ConfigValue::Seq(items) => {
            for (i, v) in items.iter().enumerate() {
                collect_reference_scalars(v, Some(&extend(at, Segment::Index(i))), out)?;
            }
        }
        ConfigValue::String(s) if s.contains('$') => {
            let path = at.expect("strings live below a namespace").clone();
            match reference::parse(s) {
                Ok(Template::Plain(_)) => {}
                Ok(_) => out.push(path),
                Err(e) => {
                    return Err(ConfigError::Syntax {
                        path: path.to_string(),
                        message: e.to_string(),
                    });
                }
            }
        }
        _ => {}
    }
    Ok(())
}

fn collect_leaves(value: &ConfigValue, at: Option<&ConfigPath>, out: &mut Vec<ConfigPath>) {
    match value {
        ConfigValue::Map(m) if !m.is_empty() => {
            for (k, v) in m {
                collect_leaves(v, Some(&extend(at, Segment::Key(k.clone()))), out);
            }
        }
        ConfigValue::Seq(items) if !items.is_empty() => {
            for (i, v) in items.iter().enumerate() {
                collect_leaves(v, Some(&extend(at, Segment::Index(i))), out);
            }
        }
        _ => {
            if let Some(p) = at {
                out.push(p.clone());
            }
        }
    }
}

/// Keeps the most informative of two errors: cycles outrank everything.
fn keep_worst(slot: &mut Option<ConfigError>, err: ConfigError) {
    match slot {
        None => *slot = Some(err),
        Some(existing) if !existing.is_cycle() && err.is_cycle() => *slot = Some(err),
        Some(_) => {}
    }
}

/// Reference substitution over the merged raw tree.
///
/// `stack` holds the reference-bearing scalars currently being expanded;
/// meeting one again is a cycle.
struct Resolver<'a> {
    tree: &'a ConfigValue,
    stack: Vec<ConfigPath>,
    /// Longest chain below each open stack entry.
    chain: Vec<usize>,
    /// Resolved scalars with the length of their reference chain.
    memo: HashMap<ConfigPath, (ConfigValue, usize)>,
}

impl<'a> Resolver<'a> {
    fn new(tree: &'a ConfigValue) -> Self {
        Resolver {
            tree,
            stack: Vec::new(),
            chain: Vec::new(),
            memo: HashMap::new(),
        }
    }

    /// Resolves the raw scalar at `path` (used by load-time validation).
    fn resolve_at(&mut self, path: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        match raw_lookup(self.tree, path.segments()) {
            Some(raw) => self.resolve_raw(raw, path),
            None => Err(ConfigError::MissingKey {
                path: path.to_string(),
            }),
        }
    }

    fn get(&mut self, path: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        let segs = path.segments();
        let mut cur = self.tree;
        for (i, seg) in segs.iter().enumerate() {
            if i > 0 {
                if let ConfigValue::String(s) = cur {
                    if let Ok(Template::Whole(target)) = reference::parse(s) {
                        let here = ConfigPath::from_segments(segs[..i].to_vec())?;
                        return self.follow(&here, &target.join(&segs[i..]));
                    }
                }
            }
            cur = child(cur, seg).ok_or_else(|| ConfigError::MissingKey {
                path: path.to_string(),
            })?;
        }
        self.resolve_raw(cur, path)
    }

    /// Follows the reference held at `from` to `to`.
    fn follow(&mut self, from: &ConfigPath, to: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        self.enter(from)?;
        let result = self.get(to).map_err(|e| dangling(from, to, e));
        let depth = self.leave();
        check_depth(from, depth)?;
        result
    }

    fn enter(&mut self, at: &ConfigPath) -> Result<(), ConfigError> {
        if let Some(pos) = self.stack.iter().position(|p| p == at) {
            return Err(ConfigError::Cycle {
                paths: self.stack[pos..].iter().map(ToString::to_string).collect(),
            });
        }
        if self.stack.len() >= MAX_REFERENCE_DEPTH {
            return Err(ConfigError::DepthExceeded {
                path: at.to_string(),
                limit: MAX_REFERENCE_DEPTH,
            });
        }
        self.stack.push(at.clone());
        self.chain.push(0);
        Ok(())
    }

    /// Pops the innermost entry and returns its chain length.
    fn leave(&mut self) -> usize {
        self.stack.pop();
        let depth = self.chain.pop().unwrap_or(0) + 1;
        self.note_depth(depth);
        depth
    }

    fn note_depth(&mut self, depth: usize) {
        if let Some(parent) = self.chain.last_mut() {
            *parent = (*parent).max(depth);
        }
    }

    fn resolve_raw(&mut self, raw: &ConfigValue, at: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        match raw {
            ConfigValue::Map(m) => {
                let mut out = IndexMap::with_capacity(m.len());
                let mut failure = None;
                for (k, v) in m {
                    match self.resolve_raw(v, &at.key(k)) {
                        Ok(resolved) => {
                            out.insert(k.clone(), resolved);
                        }
                        Err(e) => keep_worst(&mut failure, e),
                    }
                }
                failure.map_or(Ok(ConfigValue::Map(out)), Err)
            }
            ConfigValue::Seq(items) => {
                let mut out = Vec::with_capacity(items.len());
                let mut failure = None;
                for (i, v) in items.iter().enumerate() {
                    match self.resolve_raw(v, &at.index(i)) {
                        Ok(resolved) => out.push(resolved),
                        Err(e) => keep_worst(&mut failure, e),
                    }
                }
                failure.map_or(Ok(ConfigValue::Seq(out)), Err)
            }
            ConfigValue::String(s) => self.resolve_string(s, at),
            other => Ok(other.clone()),
        }
    }

    fn resolve_string(&mut self, text: &str, at: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        let template = reference::parse(text).map_err(|e| ConfigError::Syntax {
            path: at.to_string(),
            message: e.to_string(),
        })?;
        let pieces = match template {
            Template::Plain(t) => return Ok(ConfigValue::String(t)),
            Template::Whole(target) => vec![Piece::Reference(target)],
            Template::Spliced(pieces) => pieces,
        };
        if let Some((done, depth)) = self.memo.get(at) {
            let (done, depth) = (done.clone(), *depth);
            self.note_depth(depth);
            return Ok(done);
        }
        self.enter(at)?;
        let result = self.splice(&pieces, at);
        let depth = self.leave();
        check_depth(at, depth)?;
        if let Ok(v) = &result {
            self.memo.insert(at.clone(), (v.clone(), depth));
        }
        result
    }

    fn splice(&mut self, pieces: &[Piece], at: &ConfigPath) -> Result<ConfigValue, ConfigError> {
        if let [Piece::Reference(target)] = pieces {
            return self.get(target).map_err(|e| dangling(at, target, e));
        }
        let mut text = String::new();
        let mut failure = None;
        for piece in pieces {
            match piece {
                Piece::Literal(l) => text.push_str(l),
                Piece::Reference(target) => match self.get(target) {
                    Ok(v) => match v.scalar_text() {
                        Some(t) => text.push_str(&t),
                        None => keep_worst(
                            &mut failure,
                            ConfigError::EmbeddedNonScalar {
                                from: at.to_string(),
                                to: target.to_string(),
                            },
                        ),
                    },
                    Err(e) => keep_worst(&mut failure, dangling(at, target, e)),
                },
            }
        }
        failure.map_or(Ok(ConfigValue::String(text)), Err)
    }
}

fn check_depth(at: &ConfigPath, depth: usize) -> Result<(), ConfigError> {
    if depth > MAX_REFERENCE_DEPTH {
        return Err(ConfigError::DepthExceeded {
            path: at.to_string(),
            limit: MAX_REFERENCE_DEPTH,
        });
    }
    Ok(())
}

fn dangling(from: &ConfigPath, to: &ConfigPath, err: ConfigError) -> ConfigError {
    match err {
        ConfigError::MissingKey { path } if path == to.to_string() => ConfigError::DanglingReference {
            from: from.to_string(),
            to: path,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> ConfigValue {
        parse_document(text, Path::new("test.yml")).unwrap()
    }

    fn root(user: &[(&str, &str)], out: &[(&str, &str)], defaults: &str) -> Result<ConfigRoot, ConfigError> {
        ConfigRoot::from_trees(
            user.iter().map(|(k, v)| (k.to_string(), doc(v))).collect(),
            out.iter().map(|(k, v)| (k.to_string(), doc(v))).collect(),
            doc(defaults),
        )
    }

    #[test]
    fn whole_reference_keeps_type() {
        let r = root(&[("a", "x: 5\ny: ${a.x}\nz: 'n=${a.x}'\n")], &[], "{}").unwrap();
        assert_eq!(r.value("a.y").unwrap(), ConfigValue::Int(5));
        assert_eq!(r.value("a.z").unwrap(), ConfigValue::String("n=5".into()));
    }

    #[test]
    fn whole_reference_to_mapping_is_navigable() {
        let r = root(&[("a", "m: {k: [1, 2]}\nalias: ${a.m}\n")], &[], "{}").unwrap();
        assert_eq!(r.value("a.alias.k.1").unwrap(), ConfigValue::Int(2));
        assert_eq!(r.value("a.alias").unwrap(), r.value("a.m").unwrap());
    }

    #[test]
    fn two_node_cycle_names_both_paths() {
        let err = root(&[("a", "x: ${a.y}\ny: ${a.x}\n")], &[], "{}").unwrap_err();
        match err {
            ConfigError::Cycle { paths } => {
                assert!(paths.contains(&"a.x".to_string()));
                assert!(paths.contains(&"a.y".to_string()));
            }
            other => panic!("expected cycle, got {other}"),
        }
    }

    #[test]
    fn self_containing_reference_is_a_cycle() {
        let err = root(&[("a", "m: {inner: '${a.m}'}\n")], &[], "{}").unwrap_err();
        assert!(err.is_cycle(), "{err}");
    }

    #[test]
    fn cycle_hidden_behind_dangling_reference_is_found() {
        let err = root(&[("a", "x: '${a.nope} ${a.y}'\ny: ${a.x}\n")], &[], "{}").unwrap_err();
        assert!(err.is_cycle(), "{err}");
    }

    #[test]
    fn dangling_references_are_recorded_not_fatal() {
        let r = root(&[("a", "x: ${b.out.ip}\n")], &[], "{}").unwrap();
        assert_eq!(r.dangling_references(), &[("a.x".into(), "b.out.ip".into())]);
        match r.value("a.x").unwrap_err() {
            ConfigError::DanglingReference { from, to } => {
                assert_eq!(from, "a.x");
                assert_eq!(to, "b.out.ip");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_key_names_full_path() {
        let r = root(&[("a", "x: 1\n")], &[], "{}").unwrap();
        match r.value("a.y.z").unwrap_err() {
            ConfigError::MissingKey { path } => assert_eq!(path, "a.y.z"),
            other => panic!("{other}"),
        }
        assert!(r.value("a.x.0").unwrap_err().is_missing());
        assert_eq!(r.lookup("a.y").unwrap(), None);
    }

    #[test]
    fn sequence_index_out_of_range_is_missing() {
        let r = root(&[("a", "s: [1]\n")], &[], "{}").unwrap();
        assert!(matches!(r.value("a.s.3"), Err(ConfigError::MissingKey { .. })));
    }

    #[test]
    fn embedded_non_scalar_fails_load() {
        let err = root(&[("a", "m: {k: 1}\nx: 'v=${a.m}'\n")], &[], "{}").unwrap_err();
        assert!(matches!(err, ConfigError::EmbeddedNonScalar { .. }), "{err}");
    }

    #[test]
    fn key_interpolation_is_rejected() {
        let err = root(&[("a", "'${a.b}': 1\nb: k\n")], &[], "{}").unwrap_err();
        assert!(matches!(err, ConfigError::KeyInterpolation { .. }));
    }

    #[test]
    fn depth_limit_is_enforced() {
        let mut text = String::from("k0: end\n");
        for i in 1..=70 {
            text.push_str(&format!("k{i}: ${{a.k{}}}\n", i - 1));
        }
        let err = root(&[("a", &text)], &[], "{}").unwrap_err();
        assert!(matches!(err, ConfigError::DepthExceeded { .. }), "{err}");
        let mut short = String::from("k0: end\n");
        for i in 1..=40 {
            short.push_str(&format!("k{i}: ${{a.k{}}}\n", i - 1));
        }
        let r = root(&[("a", &short)], &[], "{}").unwrap();
        assert_eq!(r.string("a.k40").unwrap(), "end");
    }

    #[test]
    fn layer_precedence() {
        let r = root(
            &[("m", "a: user\nb: user\nout: {c: user}\n")],
            &[("m", "c: out\n")],
            "m: {a: default, d: default, out: {c: default, e: default}}\n",
        )
        .unwrap();
        assert_eq!(r.string("m.a").unwrap(), "user");
        assert_eq!(r.string("m.d").unwrap(), "default");
        assert_eq!(r.string("m.out.c").unwrap(), "out");
        assert_eq!(r.string("m.out.e").unwrap(), "default");
        assert_eq!(r.provenance(&ConfigPath::parse("m.out.c").unwrap()), Some(Source::OutFile(PathBuf::new())));
        assert_eq!(r.provenance(&ConfigPath::parse("m.a").unwrap()), Some(Source::UserFile(PathBuf::new())));
        assert_eq!(r.provenance(&ConfigPath::parse("m.d").unwrap()), Some(Source::Defaults));
        assert_eq!(r.provenance(&ConfigPath::parse("m.zzz").unwrap()), None);
    }

    #[test]
    fn out_values_are_literal() {
        let r = root(&[], &[("m", "cmd: 'echo $$ ${x}'\n")], "{}").unwrap();
        assert_eq!(r.string("m.out.cmd").unwrap(), "echo $$ ${x}");
    }

    #[test]
    fn defaults_only_fallback() {
        let r = root(&[("test_control", "run: []\n")], &[], "mongodb_setup: {port: 27017}\n").unwrap();
        assert_eq!(r.value("mongodb_setup.port").unwrap(), ConfigValue::Int(27017));
        assert_eq!(r.provenance(&ConfigPath::parse("mongodb_setup.port").unwrap()), Some(Source::Defaults));
    }

    #[test]
    fn file_classification() {
        assert_eq!(classify_file("mongodb_setup.yml"), Some(("mongodb_setup".into(), false)));
        assert_eq!(classify_file("mongodb_setup.out.yml"), Some(("mongodb_setup".into(), true)));
        assert_eq!(classify_file("x.yaml"), Some(("x".into(), false)));
        assert_eq!(classify_file("notes.txt"), None);
        assert_eq!(classify_file(".hidden.yml"), None);
        assert_eq!(classify_file("a.b.c.yml"), None);
    }

    #[test]
    fn bundled_defaults_parse() {
        let d = bundled_defaults();
        assert!(d.get("runtime").is_some());
    }
}
