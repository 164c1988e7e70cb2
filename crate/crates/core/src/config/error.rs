use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{}: top level must be a mapping", file.display())]
    NotAMapping { file: PathBuf },
    #[error("namespace `{namespace}` is supplied by more than one file: {}", files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", "))]
    Ambiguous {
        namespace: String,
        files: Vec<PathBuf>,
    },
    #[error("reference inside mapping key at `{path}` is not supported")]
    KeyInterpolation { path: String },
    #[error("malformed reference at `{path}`: {message}")]
    Syntax { path: String, message: String },
    #[error("reference cycle: {}", paths.join(" -> "))]
    Cycle { paths: Vec<String> },
    #[error("missing configuration key `{path}`")]
    MissingKey { path: String },
    #[error("`{from}` references missing key `{to}`")]
    DanglingReference { from: String, to: String },
    #[error("`{from}` splices non-scalar `{to}` into a string")]
    EmbeddedNonScalar { from: String, to: String },
    #[error("reference chain deeper than {limit} at `{path}`")]
    DepthExceeded { path: String, limit: usize },
    #[error(transparent)]
    InvalidPath(#[from] super::path::InvalidPath),
    #[error("cannot render `{path}`: {message}")]
    Shape { path: String, message: String },
    #[error("out-file for `{module}` rejected: {message}")]
    Contract { module: String, message: String },
    #[error("`{path}` should be {expected}, found {found}")]
    Type {
        path: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ConfigError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_cycle(&self) -> bool {
        matches!(self, ConfigError::Cycle { .. })
    }

    /// Missing keys, including dangling reference targets.
    pub fn is_missing(&self) -> bool {
        matches!(
            self,
            ConfigError::MissingKey { .. } | ConfigError::DanglingReference { .. }
        )
    }
}
