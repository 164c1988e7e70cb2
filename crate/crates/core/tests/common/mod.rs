#![allow(dead_code)]

use std::fs;
use std::path::Path;

use dsi::config::load_workspace;
use dsi::provision::{self, FleetState};

pub fn stub() -> &'static str {
    env!("CARGO_BIN_EXE_dsi-stub")
}

pub fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text.replace("STUB", stub())).unwrap();
}

/// Mock fleet of `mongod` hosts plus one workload client, no probe delays.
pub const MOCK_FLEET: &str = "backend: mock_cloud
fleet:
  mongod: {count: 3}
  workload_client: {count: 1}
probe: {retry_delay_seconds: 0}
";

/// Stub-server launch, readiness and init settings for `mongodb_setup.yml`.
pub const STUB_CONTROL: &str = "launch:
  mongod: STUB server --config {{config_path}} --dbpath {{data_dir}} --logpath {{log_file}} --port {{port}}
  configsvr: STUB server --config {{config_path}} --dbpath {{data_dir}} --logpath {{log_file}} --port {{port}}
  mongos: STUB server --config {{config_path}} --dbpath {{data_dir}} --logpath {{log_file}} --port {{port}}
readiness:
  command: grep -qx {{pid}} {{data_dir}}/ready
  interval_seconds: 0.02
  timeout_seconds: 10
stop_grace_seconds: 1
stop_poll_seconds: 0.02
init:
  replset:
    commands:
      - STUB init --dbpath {{data_dir}} --cluster-id {{cluster_id}} --members {{members}}
  sharded:
    commands:
      - STUB init --dbpath {{data_dir}} --cluster-id {{cluster_id}} --members {{members}}
";

pub const REPLSET_TOPOLOGY: &str = "mongod_config_file:
  storage:
    engine: wiredTiger
  replication:
    replSetName: rs0
topology:
  - cluster_type: replset
    id: rs0
    mongod:
      - public_ip: ${infrastructure_provisioning.out.mongod.0.public_ip}
        private_ip: ${infrastructure_provisioning.out.mongod.0.private_ip}
      - public_ip: ${infrastructure_provisioning.out.mongod.1.public_ip}
        private_ip: ${infrastructure_provisioning.out.mongod.1.private_ip}
      - public_ip: ${infrastructure_provisioning.out.mongod.2.public_ip}
        private_ip: ${infrastructure_provisioning.out.mongod.2.private_ip}
";

pub fn provisioned(dir: &Path, infra: &str) -> FleetState {
    write(dir, "infrastructure_provisioning.yml", infra);
    provision::provision(&load_workspace(dir).unwrap()).unwrap()
}

pub fn pid_alive(pid: u32) -> bool {
    match fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => !stat.contains(") Z "),
        Err(_) => false,
    }
}

pub fn host_path(fleet: &FleetState, dir: &Path, label: &str, rel: &str) -> std::path::PathBuf {
    let h = fleet.hosts.iter().find(|h| h.label() == label).unwrap();
    dir.join(h.host_dir.as_ref().unwrap()).join(rel)
}

/// Runs the `dsi` binary in `dir` with the stub binary on PATH.
pub fn dsi(dir: &Path, args: &[&str]) -> std::process::Output {
    let stub_dir = Path::new(stub()).parent().unwrap();
    let path = format!("{}:{}", stub_dir.display(), std::env::var("PATH").unwrap_or_default());
    std::process::Command::new(env!("CARGO_BIN_EXE_dsi"))
        .args(args)
        .current_dir(dir)
        .env("PATH", path)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

pub const STUB_BOOTSTRAP: &str = "infrastructure_provisioning: replica
workload_setup: stub
mongodb_setup: stub_replica
test_control: stub_ycsb
analysis: common
";

pub const SEQUENCE: [&str; 7] = [
    "bootstrap",
    "infrastructure_provisioning",
    "workload_setup",
    "mongodb_setup",
    "test_control",
    "analysis",
    "infrastructure_teardown",
];
