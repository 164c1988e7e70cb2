use std::fmt;
use std::str::FromStr;

/// One step into a configuration tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Segment {
    Key(String),
    Index(usize),
}

impl Segment {
    /// The mapping key this segment matches; indices also match the
    /// equivalent text key so `run.0` works on `{0: ...}` style mappings.
    pub fn as_key(&self) -> String {
        match self {
            Segment::Key(k) => k.clone(),
            Segment::Index(i) => i.to_string(),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Key(k) => f.write_str(k),
            Segment::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Dotted address into the configuration namespace, e.g.
/// `topology.0.mongod.1.public_ip`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigPath {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration path `{0}`")]
pub struct InvalidPath(pub String);

impl ConfigPath {
    pub fn parse(text: &str) -> Result<Self, InvalidPath> {
        text.parse()
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self, InvalidPath> {
        if segments.is_empty() {
            return Err(InvalidPath(String::new()));
        }
        Ok(ConfigPath { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// The top-level namespace (module name) this path lives in.
    pub fn namespace(&self) -> &str {
        match &self.segments[0] {
            Segment::Key(k) => k,
            Segment::Index(_) => "",
        }
    }

    pub fn child(&self, segment: Segment) -> ConfigPath {
        let mut segments = self.segments.clone();
        segments.push(segment);
        ConfigPath { segments }
    }

    pub fn key(&self, key: &str) -> ConfigPath {
        self.child(Segment::Key(key.to_owned()))
    }

    pub fn index(&self, index: usize) -> ConfigPath {
        self.child(Segment::Index(index))
    }

    pub fn join(&self, rest: &[Segment]) -> ConfigPath {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(rest);
        ConfigPath { segments }
    }

    pub fn starts_with(&self, prefix: &ConfigPath) -> bool {
        self.segments.starts_with(&prefix.segments)
    }
}

impl FromStr for ConfigPath {
    type Err = InvalidPath;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        if text.is_empty() {
            return Err(InvalidPath(text.to_owned()));
        }
        let segments = text
            .split('.')
            .map(|part| {
                if part.is_empty() || part.contains(['$', '{', '}']) {
                    Err(InvalidPath(text.to_owned()))
                } else if part.bytes().all(|b| b.is_ascii_digit()) {
                    part.parse()
                        .map(Segment::Index)
                        .map_err(|_| InvalidPath(text.to_owned()))
                } else {
                    Ok(Segment::Key(part.to_owned()))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(ConfigPath { segments })
    }
}

impl fmt::Display for ConfigPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{seg}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_segments_address_sequences() {
        let p = ConfigPath::parse("topology.0.mongod.1.public_ip").unwrap();
        assert_eq!(
            p.segments(),
            &[
                Segment::Key("topology".into()),
                Segment::Index(0),
                Segment::Key("mongod".into()),
                Segment::Index(1),
                Segment::Key("public_ip".into()),
            ]
        );
        assert_eq!(p.to_string(), "topology.0.mongod.1.public_ip");
        assert_eq!(p.namespace(), "topology");
    }

    #[test]
    fn empty_segments_are_rejected() {
        for bad in ["", "a..b", ".a", "a.", "a.${b}"] {
            assert!(ConfigPath::parse(bad).is_err(), "{bad}");
        }
    }
}
