use std::fmt;

use indexmap::IndexMap;

/// A configuration tree node.
///
/// Mappings keep their source order so rendering is stable across loads.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    String(String),
    Seq(Vec<ConfigValue>),
    Map(IndexMap<String, ConfigValue>),
}

/// Reasons a YAML node cannot become a [`ConfigValue`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConversionError {
    DuplicateKey(String),
    UnsupportedKey(String),
    Tagged(String),
}

impl fmt::Display for ConversionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConversionError::DuplicateKey(k) => write!(f, "duplicate mapping key `{k}`"),
            ConversionError::UnsupportedKey(k) => write!(f, "mapping key must be a scalar, got {k}"),
            ConversionError::Tagged(t) => write!(f, "YAML tags are not supported ({t})"),
        }
    }
}

impl ConfigValue {
    pub fn empty_map() -> Self {
        ConfigValue::Map(IndexMap::new())
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, ConfigValue::Seq(_) | ConfigValue::Map(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigValue::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ConfigValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Integers widen to floats; nothing else converts.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ConfigValue::Int(i) => Some(*i as f64),
            ConfigValue::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ConfigValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&IndexMap<String, ConfigValue>> {
        match self {
            ConfigValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_map_mut(&mut self) -> Option<&mut IndexMap<String, ConfigValue>> {
        match self {
            ConfigValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[ConfigValue]> {
        match self {
            ConfigValue::Seq(s) => Some(s),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&ConfigValue> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConfigValue::Null => "null",
            ConfigValue::Bool(_) => "boolean",
            ConfigValue::Int(_) => "integer",
            ConfigValue::Float(_) => "float",
            ConfigValue::String(_) => "string",
            ConfigValue::Seq(_) => "sequence",
            ConfigValue::Map(_) => "mapping",
        }
    }

    /// Canonical text form of a scalar, used when splicing into strings and
    /// when writing `key=value` properties. `None` for sequences and mappings.
    pub fn scalar_text(&self) -> Option<String> {
        Some(match self {
            ConfigValue::Null => "null".to_owned(),
            ConfigValue::Bool(b) => b.to_string(),
            ConfigValue::Int(i) => i.to_string(),
            ConfigValue::Float(x) => float_text(*x),
            ConfigValue::String(s) => s.clone(),
            ConfigValue::Seq(_) | ConfigValue::Map(_) => return None,
        })
    }

    /// Visits every string scalar and mapping key, depth first.
    pub fn any_text(&self, pred: &mut impl FnMut(&str) -> bool) -> bool {
        match self {
            ConfigValue::String(s) => pred(s),
            ConfigValue::Seq(items) => items.iter().any(|v| v.any_text(pred)),
            ConfigValue::Map(m) => m.iter().any(|(k, v)| pred(k) || v.any_text(pred)),
            _ => false,
        }
    }

    pub fn from_yaml(value: serde_yaml::Value) -> Result<Self, ConversionError> {
        use serde_yaml::Value as Y;
        Ok(match value {
            Y::Null => ConfigValue::Null,
            Y::Bool(b) => ConfigValue::Bool(b),
            Y::Number(n) => {
                if let Some(i) = n.as_i64() {
                    ConfigValue::Int(i)
                } else {
                    ConfigValue::Float(n.as_f64().unwrap_or(f64::NAN))
                }
            }
            Y::String(s) => ConfigValue::String(s),
            Y::Sequence(items) => ConfigValue::Seq(
                items
                    .into_iter()
                    .map(ConfigValue::from_yaml)
                    .collect::<Result<_, _>>()?,
            ),
            Y::Mapping(m) => {
                let mut out = IndexMap::with_capacity(m.len());
                for (k, v) in m {
                    let key = match ConfigValue::from_yaml(k)? {
                        ConfigValue::Seq(_) | ConfigValue::Map(_) => {
                            return Err(ConversionError::UnsupportedKey("a collection".into()));
                        }
                        scalar => scalar.scalar_text().unwrap_or_default(),
                    };
                    if out.contains_key(&key) {
                        return Err(ConversionError::DuplicateKey(key));
                    }
                    out.insert(key, ConfigValue::from_yaml(v)?);
                }
                ConfigValue::Map(out)
            }
            Y::Tagged(t) => return Err(ConversionError::Tagged(t.tag.to_string())),
        })
    }

    pub fn to_yaml(&self) -> serde_yaml::Value {
        use serde_yaml::Value as Y;
        match self {
            ConfigValue::Null => Y::Null,
            ConfigValue::Bool(b) => Y::Bool(*b),
            ConfigValue::Int(i) => Y::Number((*i).into()),
            ConfigValue::Float(x) => Y::Number((*x).into()),
            ConfigValue::String(s) => Y::String(s.clone()),
            ConfigValue::Seq(items) => Y::Sequence(items.iter().map(ConfigValue::to_yaml).collect()),
            ConfigValue::Map(m) => Y::Mapping(
                m.iter()
                    .map(|(k, v)| (Y::String(k.clone()), v.to_yaml()))
                    .collect(),
            ),
        }
    }

    /// `None` when the tree holds a non-finite float, which JSON cannot carry.
    pub fn to_json(&self) -> Option<serde_json::Value> {
        use serde_json::Value as J;
        Some(match self {
            ConfigValue::Null => J::Null,
            ConfigValue::Bool(b) => J::Bool(*b),
            ConfigValue::Int(i) => J::Number((*i).into()),
            ConfigValue::Float(x) => J::Number(serde_json::Number::from_f64(*x)?),
            ConfigValue::String(s) => J::String(s.clone()),
            ConfigValue::Seq(items) => {
                J::Array(items.iter().map(ConfigValue::to_json).collect::<Option<_>>()?)
            }
            ConfigValue::Map(m) => {
                let mut obj = serde_json::Map::with_capacity(m.len());
                for (k, v) in m {
                    obj.insert(k.clone(), v.to_json()?);
                }
                J::Object(obj)
            }
        })
    }

    pub fn from_json(value: serde_json::Value) -> Self {
        use serde_json::Value as J;
        match value {
            J::Null => ConfigValue::Null,
            J::Bool(b) => ConfigValue::Bool(b),
            J::Number(n) => match n.as_i64() {
                Some(i) => ConfigValue::Int(i),
                None => ConfigValue::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            J::String(s) => ConfigValue::String(s),
            J::Array(items) => ConfigValue::Seq(items.into_iter().map(ConfigValue::from_json).collect()),
            J::Object(m) => ConfigValue::Map(
                m.into_iter()
                    .map(|(k, v)| (k, ConfigValue::from_json(v)))
                    .collect(),
            ),
        }
    }

    /// Overlays `self` on `lower`: mappings merge key by key with `self`
    /// winning, anything else in `self` replaces `lower` wholesale.
    pub fn overlay(&self, lower: &ConfigValue) -> ConfigValue {
        match (self, lower) {
            (ConfigValue::Map(high), ConfigValue::Map(low)) => {
                let mut merged = IndexMap::with_capacity(high.len().max(low.len()));
                for (k, v) in high {
                    let value = match low.get(k) {
                        Some(lv) => v.overlay(lv),
                        None => v.clone(),
                    };
                    merged.insert(k.clone(), value);
                }
                for (k, v) in low {
                    if !merged.contains_key(k) {
                        merged.insert(k.clone(), v.clone());
                    }
                }
                ConfigValue::Map(merged)
            }
            (high, _) => high.clone(),
        }
    }
}

/// Shortest text that parses back to the same float.
pub fn float_text(x: f64) -> String {
    if x.is_nan() {
        ".nan".to_owned()
    } else if x.is_infinite() {
        if x > 0.0 { ".inf".to_owned() } else { "-.inf".to_owned() }
    } else {
        // Debug keeps a trailing `.0` on integral values, so the text stays a float.
        format!("{x:?}")
    }
}

impl From<&str> for ConfigValue {
    fn from(s: &str) -> Self {
        ConfigValue::String(s.to_owned())
    }
}

impl From<String> for ConfigValue {
    fn from(s: String) -> Self {
        ConfigValue::String(s)
    }
}

impl From<i64> for ConfigValue {
    fn from(i: i64) -> Self {
        ConfigValue::Int(i)
    }
}

impl From<bool> for ConfigValue {
    fn from(b: bool) -> Self {
        ConfigValue::Bool(b)
    }
}

impl From<f64> for ConfigValue {
    fn from(x: f64) -> Self {
        ConfigValue::Float(x)
    }
}

impl<V: Into<ConfigValue>> FromIterator<(String, V)> for ConfigValue {
    fn from_iter<T: IntoIterator<Item = (String, V)>>(iter: T) -> Self {
        ConfigValue::Map(iter.into_iter().map(|(k, v)| (k, v.into())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yaml(text: &str) -> ConfigValue {
        ConfigValue::from_yaml(serde_yaml::from_str(text).unwrap()).unwrap()
    }

    #[test]
    fn scalars_keep_their_type() {
        let v = yaml("a: 1\nb: 1.0\nc: 'true'\nd: true\ne: ~\nf: '5'\n");
        let m = v.as_map().unwrap();
        assert_eq!(m["a"], ConfigValue::Int(1));
        assert_eq!(m["b"], ConfigValue::Float(1.0));
        assert_eq!(m["c"], ConfigValue::String("true".into()));
        assert_eq!(m["d"], ConfigValue::Bool(true));
        assert_eq!(m["e"], ConfigValue::Null);
        assert_eq!(m["f"], ConfigValue::String("5".into()));
    }

    #[test]
    fn integer_keys_become_text() {
        let v = yaml("0: a\n1: b\n");
        assert_eq!(v.get("1"), Some(&ConfigValue::String("b".into())));
    }

    #[test]
    fn colliding_keys_after_conversion_are_rejected() {
        let raw: serde_yaml::Value = serde_yaml::from_str("0: a\n'0': b\n").unwrap();
        assert_eq!(
            ConfigValue::from_yaml(raw),
            Err(ConversionError::DuplicateKey("0".into()))
        );
    }

    #[test]
    fn float_text_is_shortest_round_trip() {
        assert_eq!(float_text(1.0), "1.0");
        assert_eq!(float_text(0.1), "0.1");
        assert_eq!(float_text(f64::INFINITY), ".inf");
        assert_eq!(ConfigValue::Float(2.5).scalar_text().unwrap(), "2.5");
        assert_eq!(ConfigValue::Int(-7).scalar_text().unwrap(), "-7");
    }

    #[test]
    fn overlay_prefers_upper_layer() {
        let high = yaml("a: {x: 1}\nb: [1]\n");
        let low = yaml("a: {x: 2, y: 3}\nb: [2, 3]\nc: 4\n");
        let merged = high.overlay(&low);
        assert_eq!(merged, yaml("a: {x: 1, y: 3}\nb: [1]\nc: 4\n"));
    }

    proptest::proptest! {
        #[test]
        fn yaml_text_round_trip_is_lossless(
            i in proptest::num::i64::ANY,
            x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL,
            s in "[ -~]{0,12}",
            b in proptest::bool::ANY,
        ) {
            let value: ConfigValue = [
                ("i".to_owned(), ConfigValue::Int(i)),
                ("x".to_owned(), ConfigValue::Float(x)),
                ("s".to_owned(), ConfigValue::String(s)),
                ("b".to_owned(), ConfigValue::Bool(b)),
                ("n".to_owned(), ConfigValue::Seq(vec![ConfigValue::Null])),
            ]
            .into_iter()
            .collect();
            let text = serde_yaml::to_string(&value.to_yaml()).unwrap();
            let back = ConfigValue::from_yaml(serde_yaml::from_str(&text).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, value);
        }

        #[test]
        fn float_text_parses_back(x in proptest::num::f64::NORMAL) {
            let text = float_text(x);
            let back = ConfigValue::from_yaml(serde_yaml::from_str(&text).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, ConfigValue::Float(x));
        }
    }
}
