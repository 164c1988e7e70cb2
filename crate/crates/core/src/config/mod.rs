//! Unified configuration namespace over a workspace's per-module YAML files.

mod error;
mod out;
mod path;
pub mod reference;
mod render;
mod root;
mod value;

pub use error::ConfigError;
pub use out::{OutDocument, out_file_name, write_out};
pub use path::{ConfigPath, InvalidPath, Segment};
pub use render::{RenderFormat, render_external, render_value};
pub use root::{ConfigRoot, MAX_REFERENCE_DEPTH, STATE_SUFFIX, Source, bundled_defaults, load_workspace};
pub(crate) use root::{parse_document, read_document};
pub use value::{ConfigValue, ConversionError, float_text};
