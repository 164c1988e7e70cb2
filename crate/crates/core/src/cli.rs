//! `dsi <module>`: runs one pipeline module against the current directory.
//! There are no options; everything else comes from the workspace files.

use std::fmt::Display;
use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::analysis::{self, AnalysisError};
use crate::bootstrap::{self, BootstrapError, ConfigLibrary};
use crate::cluster::{self, DeployError, SetupOut};
use crate::config::{ConfigError, ConfigRoot, load_workspace};
use crate::control::{self, ControlError, TaskReport};
use crate::hooks::HookError;
use crate::provision::{self, FleetState, ProvisionError};
use crate::workload::{self, WorkloadSetupError};

pub const COMMANDS: [&str; 7] = [
    "bootstrap",
    "infrastructure_provisioning",
    "workload_setup",
    "mongodb_setup",
    "test_control",
    "analysis",
    "infrastructure_teardown",
];

pub const SUCCESS: i32 = 0;
pub const FAILURE: i32 = 1;
pub const CONFIG_ERROR: i32 = 2;

/// A module's outcome: exit code plus what to tell the user.
struct Outcome {
    code: i32,
    message: Option<String>,
}

impl Outcome {
    fn ok() -> Self {
        Outcome { code: SUCCESS, message: None }
    }

    fn fail(code: i32, message: impl Display) -> Self {
        Outcome {
            code,
            message: Some(message.to_string()),
        }
    }
}

pub fn usage() -> String {
    format!("usage: dsi <module>\nmodules: {}", COMMANDS.join(" | "))
}

fn init_logging(root: &ConfigRoot) {
    let level = root.string("runtime.log_level").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp_millis()
        .try_init();
}

fn lock(root: &ConfigRoot, dir: &Path) -> Result<File, String> {
    let name = root.string("runtime.lock_file").map_err(|e| e.to_string())?;
    let path = dir.join(name);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => Err(format!(
            "another dsi module is running in this workspace ({} is locked)",
            path.display()
        )),
        Err(std::fs::TryLockError::Error(e)) => Err(format!("{}: {e}", path.display())),
    }
}

/// Parses the argument vector (without the program name) and runs the
/// module in `cwd`. Returns the process exit code.
pub fn invoke(args: &[String], cwd: &Path) -> i32 {
    let module = match args {
        [m] if COMMANDS.contains(&m.as_str()) => m.as_str(),
        _ => {
            eprintln!("{}", usage());
            return CONFIG_ERROR;
        }
    };
    let root = match load_workspace(cwd) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("dsi {module}: configuration error: {e}");
            return CONFIG_ERROR;
        }
    };
    init_logging(&root);
    let _lock = match lock(&root, cwd) {
        Ok(l) => l,
        Err(message) => {
            eprintln!("dsi {module}: {message}");
            return FAILURE;
        }
    };
    // Re-read now that nothing else can be writing.
    let root = match root.reload() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("dsi {module}: configuration error: {e}");
            return CONFIG_ERROR;
        }
    };
    log::info!("dsi {module} in {}", cwd.display());
    let outcome = match module {
        "bootstrap" => run_bootstrap(cwd),
        "infrastructure_provisioning" => run_provisioning(&root),
        "workload_setup" => with_fleet(&root, run_workload_setup),
        "mongodb_setup" => with_fleet(&root, run_mongodb_setup),
        "test_control" => with_fleet(&root, run_test_control),
        "analysis" => run_analysis(&root),
        _ => run_teardown(&root),
    };
    if let Some(message) = &outcome.message {
        let kind = if outcome.code == CONFIG_ERROR { "configuration error" } else { "failed" };
        eprintln!("dsi {module}: {kind}: {message}");
    }
    outcome.code
}

fn config_failure(e: ConfigError) -> Outcome {
    Outcome::fail(CONFIG_ERROR, e)
}

fn with_fleet(root: &ConfigRoot, f: fn(&ConfigRoot, &FleetState) -> Outcome) -> Outcome {
    match FleetState::from_out(root) {
        Ok(fleet) => f(root, &fleet),
        Err(e) => config_failure(e),
    }
}

fn run_bootstrap(cwd: &Path) -> Outcome {
    let spec = cwd.join(bootstrap::SPEC_FILE);
    if !spec.is_file() {
        return Outcome::fail(CONFIG_ERROR, format!("{} not found", spec.display()));
    }
    match bootstrap::bootstrap(&spec, &ConfigLibrary::Bundled, cwd) {
        Ok(report) => {
            for f in &report.files {
                println!("{} <- {}", f.path.display(), f.source);
            }
            Outcome::ok()
        }
        Err(BootstrapError::Conflict { path }) => Outcome::fail(FAILURE, BootstrapError::Conflict { path }),
        Err(e) => Outcome::fail(CONFIG_ERROR, e),
    }
}

fn run_provisioning(root: &ConfigRoot) -> Outcome {
    match provision::provision(root) {
        Ok(fleet) => {
            for h in &fleet.hosts {
                println!("{} {} {}", h.label(), h.public_ip, h.private_ip);
            }
            Outcome::ok()
        }
        Err(ProvisionError::Config(e)) => config_failure(e),
        Err(e) => Outcome::fail(FAILURE, e),
    }
}

fn run_workload_setup(root: &ConfigRoot, fleet: &FleetState) -> Outcome {
    match workload::workload_setup(root, fleet) {
        Ok(_) => Outcome::ok(),
        Err(WorkloadSetupError::Config(e)) => config_failure(e),
        Err(e) => Outcome::fail(FAILURE, e),
    }
}

fn deploy_failure(e: DeployError) -> Outcome {
    match e {
        DeployError::Config(e) | DeployError::Hook(HookError::Config(e)) => config_failure(e),
        e => Outcome::fail(FAILURE, e),
    }
}

fn run_mongodb_setup(root: &ConfigRoot, fleet: &FleetState) -> Outcome {
    match cluster::deploy(root, fleet) {
        Ok(state) => {
            for c in &state.record.clusters {
                println!("{} {}", c.id, c.meta.mongodb_url);
            }
            Outcome::ok()
        }
        Err(e) => deploy_failure(e),
    }
}

fn run_test_control(root: &ConfigRoot, fleet: &FleetState) -> Outcome {
    let (report, early) = match control::run_tests(root, fleet) {
        Ok(report) => (report, None),
        Err(e) => (TaskReport::aborted(e.to_string()), Some(e)),
    };
    for t in &report.tests {
        println!("{} {:?}", t.id, t.status);
    }
    // The bundle is produced whatever happened above.
    let collected = control::collect_artifacts(root, fleet, &report);
    match (early, collected) {
        (Some(ControlError::Config(e)), _) => config_failure(e),
        (Some(e @ ControlError::Validation(_)), _) => Outcome::fail(CONFIG_ERROR, e),
        (None, Err(e)) => Outcome::fail(FAILURE, format!("artifact collection: {e}")),
        (None, Ok(bundle)) => {
            println!("{}", bundle.archive.display());
            match &report.task_error {
                Some(message) => Outcome::fail(FAILURE, message),
                None if !report.all_passed() => Outcome::fail(FAILURE, "one or more tests did not pass"),
                None => Outcome::ok(),
            }
        }
    }
}

fn run_analysis(root: &ConfigRoot) -> Outcome {
    match analysis::analyze_workspace(root) {
        Ok(report) => {
            print!("{}", report.to_text());
            if report.passed() {
                Outcome::ok()
            } else {
                Outcome::fail(FAILURE, "static checks failed")
            }
        }
        Err(AnalysisError::Config(e)) => config_failure(e),
        Err(e) => Outcome::fail(FAILURE, e),
    }
}

fn run_teardown(root: &ConfigRoot) -> Outcome {
    let running = root
        .dir()
        .map(SetupOut::read)
        .transpose()
        .ok()
        .flatten()
        .flatten()
        .is_some_and(|s| s.stopped_at.is_none());
    if running {
        match FleetState::from_out(root) {
            Ok(fleet) => {
                if let Err(e) = cluster::stop_all(root, &fleet) {
                    log::warn!("stopping the cluster before teardown: {e}");
                }
            }
            Err(e) => log::warn!("cluster left running: {e}"),
        }
    }
    match provision::destroy(root) {
        Ok(state) => {
            println!("released {} hosts", state.count(provision::Action::Destroy));
            Outcome::ok()
        }
        Err(ProvisionError::Config(e)) => config_failure(e),
        Err(e) => Outcome::fail(FAILURE, e),
    }
}
