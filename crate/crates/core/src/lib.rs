pub mod analysis;
pub mod bootstrap;
pub mod channel;
pub mod cli;
pub mod clock;
pub mod cluster;
pub mod config;
pub mod control;
pub mod hooks;
pub mod parallel;
pub mod provision;
pub mod template;
pub mod workload;

pub use config::{ConfigError, ConfigPath, ConfigRoot, ConfigValue};
