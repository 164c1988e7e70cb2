use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dsi::ConfigValue;
use dsi::bootstrap::{BootstrapError, ConfigLibrary, MODULES, bootstrap};
use proptest::prelude::*;

const LIBRARY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configurations");

fn library_text(module: &str, id: &str) -> String {
    fs::read_to_string(Path::new(LIBRARY).join(module).join(format!("{id}.yml"))).unwrap()
}

fn parse(text: &str) -> ConfigValue {
    ConfigValue::from_yaml(serde_yaml::from_str(text).unwrap()).unwrap()
}

/// Runs bootstrap with `spec` written to a separate spec directory.
fn run(spec: &str, workdir: &Path) -> Result<dsi::bootstrap::BootstrapReport, BootstrapError> {
    let spec_dir = tempfile::tempdir().unwrap();
    let spec_path = spec_dir.path().join("bootstrap.yml");
    fs::write(&spec_path, spec).unwrap();
    bootstrap(&spec_path, &ConfigLibrary::Bundled, workdir)
}

fn listing(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn selections_copy_library_files_verbatim() {
    let work = tempfile::tempdir().unwrap();
    let spec = "mongodb_setup: replica\ntest_control: ycsb\n";
    let report = run(spec, work.path()).unwrap();
    let files = listing(work.path());
    assert_eq!(
        files.keys().collect::<Vec<_>>(),
        ["bootstrap.yml", "mongodb_setup.yml", "test_control.yml"]
    );
    assert_eq!(files["mongodb_setup.yml"], library_text("mongodb_setup", "replica").as_bytes());
    assert_eq!(files["test_control.yml"], library_text("test_control", "ycsb").as_bytes());
    assert_eq!(files["bootstrap.yml"], spec.as_bytes());
    let sources: Vec<&str> = report.files.iter().map(|f| f.source.as_str()).collect();
    assert_eq!(
        sources,
        ["configurations/mongodb_setup/replica.yml", "configurations/test_control/ycsb.yml", "bootstrap.yml"]
    );
}

#[test]
fn empty_selection_writes_only_the_spec() {
    let work = tempfile::tempdir().unwrap();
    run("{}\n", work.path()).unwrap();
    assert_eq!(listing(work.path()).keys().collect::<Vec<_>>(), ["bootstrap.yml"]);
}

#[test]
fn override_replaces_one_path_and_nothing_else() {
    let work = tempfile::tempdir().unwrap();
    let spec = "test_control: ycsb\noverrides:\n  test_control.run.0.cmd: ./bin/ycsb load mongodb -threads 64\n";
    let report = run(spec, work.path()).unwrap();
    assert!(report.files[0].overridden);
    let mut expected = parse(&library_text("test_control", "ycsb"));
    let run0 = match &mut expected {
        ConfigValue::Map(m) => match m.get_mut("run").unwrap() {
            ConfigValue::Seq(s) => &mut s[0],
            _ => unreachable!(),
        },
        _ => unreachable!(),
    };
    run0.as_map_mut()
        .unwrap()
        .insert("cmd".into(), ConfigValue::String("./bin/ycsb load mongodb -threads 64".into()));
    let got = parse(&fs::read_to_string(work.path().join("test_control.yml")).unwrap());
    assert_eq!(got, expected);
}

#[test]
fn nested_override_creates_missing_keys_and_unselected_modules() {
    let work = tempfile::tempdir().unwrap();
    let spec = "mongodb_setup: stub_replica\noverrides:\n  mongodb_setup:\n    mongod_config_file:\n      storage: {cacheSizeGB: 2}\n  runtime:\n    log_level: debug\n";
    run(spec, work.path()).unwrap();
    let setup = parse(&fs::read_to_string(work.path().join("mongodb_setup.yml")).unwrap());
    let storage = setup.get("mongod_config_file").unwrap().get("storage").unwrap();
    assert_eq!(storage.get("engine").unwrap().as_str(), Some("wiredTiger"));
    assert_eq!(storage.get("cacheSizeGB").unwrap().as_i64(), Some(2));
    let runtime = parse(&fs::read_to_string(work.path().join("runtime.yml")).unwrap());
    assert_eq!(runtime.get("log_level").unwrap().as_str(), Some("debug"));
}

#[test]
fn bad_override_paths_are_errors() {
    for spec in [
        "test_control: ycsb\noverrides: {test_control.run.9.cmd: x}\n",
        "test_control: ycsb\noverrides: {test_control.run.0.cmd.deeper: x}\n",
        "overrides: {not_a_module.key: x}\n",
    ] {
        let work = tempfile::tempdir().unwrap();
        assert!(matches!(run(spec, work.path()), Err(BootstrapError::Override { .. })), "{spec}");
        assert!(listing(work.path()).is_empty());
    }
}

#[test]
fn unknown_identifier_lists_available_ones() {
    let work = tempfile::tempdir().unwrap();
    let err = run("mongodb_setup: sharded_gigantic\n", work.path()).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("sharded_gigantic") && text.contains("replica") && text.contains("stub_standalone"), "{text}");
    assert!(listing(work.path()).is_empty());
}

#[test]
fn unknown_module_key_is_rejected() {
    let work = tempfile::tempdir().unwrap();
    assert!(matches!(run("mongodb_setpu: replica\n", work.path()), Err(BootstrapError::Config(_))));
}

#[test]
fn conflicting_file_is_refused_and_identical_file_accepted() {
    let work = tempfile::tempdir().unwrap();
    fs::write(work.path().join("test_control.yml"), "run: []\n").unwrap();
    let err = run("mongodb_setup: replica\ntest_control: ycsb\n", work.path()).unwrap_err();
    assert!(matches!(err, BootstrapError::Conflict { .. }));
    assert_eq!(fs::read_to_string(work.path().join("test_control.yml")).unwrap(), "run: []\n");
    assert!(!work.path().join("mongodb_setup.yml").exists());

    let again = tempfile::tempdir().unwrap();
    run("test_control: ycsb\n", again.path()).unwrap();
    run("test_control: ycsb\n", again.path()).unwrap();
}

#[test]
fn spec_inside_the_workdir_is_fine() {
    let work = tempfile::tempdir().unwrap();
    let spec = work.path().join("bootstrap.yml");
    fs::write(&spec, "analysis: common\n").unwrap();
    bootstrap(&spec, &ConfigLibrary::Bundled, work.path()).unwrap();
    assert_eq!(listing(work.path()).len(), 2);
}

#[test]
fn directory_library_matches_bundled() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec_dir = tempfile::tempdir().unwrap();
    let spec = spec_dir.path().join("bootstrap.yml");
    fs::write(&spec, "infrastructure_provisioning: replica\nmongodb_setup: stub_replica\n").unwrap();
    bootstrap(&spec, &ConfigLibrary::Bundled, a.path()).unwrap();
    bootstrap(&spec, &ConfigLibrary::Directory(LIBRARY.into()), b.path()).unwrap();
    assert_eq!(listing(a.path()), listing(b.path()));
    for module in MODULES {
        assert_eq!(
            ConfigLibrary::Bundled.identifiers(module),
            ConfigLibrary::Directory(LIBRARY.into()).identifiers(module),
            "{module}"
        );
    }
}

fn spec_strategy() -> impl Strategy<Value = String> {
    let choices: Vec<(&'static str, Vec<String>)> =
        MODULES.iter().map(|m| (*m, ConfigLibrary::Bundled.identifiers(m))).collect();
    let per_module: Vec<_> = choices
        .into_iter()
        .map(|(m, ids)| prop::option::of(prop::sample::select(ids)).prop_map(move |id| id.map(|i| format!("{m}: {i}\n"))))
        .collect();
    (per_module, prop::option::of(1u32..1000)).prop_map(|(lines, threads)| {
        let mut spec: String = lines.into_iter().flatten().collect();
        if let Some(t) = threads {
            spec.push_str(&format!("overrides:\n  runtime.parallelism: {t}\n"));
        }
        spec
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bootstrap_is_reproducible_and_traceable(spec in spec_strategy()) {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let report = run(&spec, a.path()).unwrap();
        run(&spec, b.path()).unwrap();
        let files = listing(a.path());
        prop_assert_eq!(&files, &listing(b.path()));
        prop_assert_eq!(files.len(), report.files.len());
        for f in &report.files {
            prop_assert!(f.source.contains("bootstrap.yml") || f.source.starts_with("configurations/"));
        }
        dsi::config::load_workspace(a.path()).unwrap();
    }
}
