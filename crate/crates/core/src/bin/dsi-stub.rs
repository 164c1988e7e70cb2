//! Stand-in for the system under test and the benchmark client.
//!
//! ```text
//! dsi-stub server --config FILE --dbpath DIR --logpath FILE [--port N]
//! dsi-stub init --dbpath DIR --cluster-id ID --members LIST
//! dsi-stub bench WORKLOAD_FILE
//! ```
//!
//! The server reads a `stub` section from its config file:
//! `ignore_term` (survive SIGTERM), `log_lines` (written to the log after
//! startup), `core_file` (created in the working directory) and
//! `lifetime_seconds` (exit after this long; default 600). It exits on its
//! own when its dbpath disappears.
//!
//! The benchmark reads `stub.exit_code`, `stub.throughput` and
//! `stub.stderr` from the workload properties.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

fn flags(args: &[String]) -> Result<HashMap<String, String>, String> {
    let mut out = HashMap::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let name = flag
            .strip_prefix("--")
            .ok_or_else(|| format!("unexpected argument {flag}"))?;
        let value = it.next().ok_or_else(|| format!("--{name} needs a value"))?;
        out.insert(name.to_owned(), value.clone());
    }
    Ok(out)
}

fn required<'a>(f: &'a HashMap<String, String>, name: &str) -> Result<&'a str, String> {
    f.get(name).map(String::as_str).ok_or_else(|| format!("--{name} is required"))
}

fn log_line(path: &Path, text: &str) -> Result<(), String> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let now = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ");
    writeln!(file, "{now} {text}").map_err(|e| e.to_string())
}

fn server(args: &[String]) -> Result<(), String> {
    let f = flags(args)?;
    let config_path = required(&f, "config")?;
    let dbpath = PathBuf::from(required(&f, "dbpath")?);
    let logpath = PathBuf::from(required(&f, "logpath")?);
    let port = f.get("port").cloned().unwrap_or_default();
    let text = fs::read_to_string(config_path).map_err(|e| format!("{config_path}: {e}"))?;
    let config: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| e.to_string())?;
    let stub = config.get("stub").cloned().unwrap_or(serde_yaml::Value::Null);

    if stub.get("ignore_term").and_then(|v| v.as_bool()).unwrap_or(false) {
        // SAFETY: installs SIG_IGN before any other thread exists.
        unsafe {
            libc::signal(libc::SIGTERM, libc::SIG_IGN);
        }
    }
    fs::create_dir_all(&dbpath).map_err(|e| format!("{}: {e}", dbpath.display()))?;
    if let Some(parent) = logpath.parent() {
        fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    let counter = dbpath.join("stub.dat");
    let starts: u64 = fs::read_to_string(&counter)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
        + 1;
    fs::write(&counter, format!("{starts}\n")).map_err(|e| e.to_string())?;

    let pid = std::process::id();
    log_line(&logpath, &format!("I CONTROL  [initandlisten] stub server pid={pid} port={port} start={starts}"))?;
    if let Some(lines) = stub.get("log_lines").and_then(|v| v.as_sequence()) {
        for line in lines.iter().filter_map(|l| l.as_str()) {
            log_line(&logpath, line)?;
        }
    }
    if let Some(name) = stub.get("core_file").and_then(|v| v.as_str()) {
        fs::write(name, b"\x7fELF stub core").map_err(|e| format!("{name}: {e}"))?;
    }
    log_line(&logpath, "I NETWORK  [listener] waiting for connections")?;
    fs::write(dbpath.join("ready"), format!("{pid}\n")).map_err(|e| e.to_string())?;

    let lifetime = stub
        .get("lifetime_seconds")
        .and_then(|v| v.as_f64())
        .unwrap_or(600.0);
    let deadline = Instant::now() + Duration::from_secs_f64(lifetime);
    while Instant::now() < deadline && dbpath.is_dir() {
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(())
}

fn init(args: &[String]) -> Result<(), String> {
    let f = flags(args)?;
    let dbpath = Path::new(required(&f, "dbpath")?);
    if !dbpath.join("ready").is_file() {
        return Err(format!("no server running on {}", dbpath.display()));
    }
    let line = format!(
        "initiate {} {}\n",
        required(&f, "cluster-id")?,
        required(&f, "members")?
    );
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dbpath.join("requests.log"))
        .map_err(|e| e.to_string())?;
    file.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
    println!("{{ ok: 1 }}");
    Ok(())
}

fn bench(args: &[String]) -> Result<ExitCode, String> {
    let [workload] = args else {
        return Err("bench takes one workload file".into());
    };
    let text = fs::read_to_string(workload).map_err(|e| format!("{workload}: {e}"))?;
    let props: HashMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let url = props.get("mongodb.url").copied().unwrap_or("");
    println!("connecting to {url}");
    let throughput = props.get("stub.throughput").copied().unwrap_or("1234.5");
    let records = props.get("recordcount").copied().unwrap_or("0");
    println!("[OVERALL], RunTime(ms), 1000");
    println!("[OVERALL], Throughput(ops/sec), {throughput}");
    println!("[INSERT], Operations, {records}");
    if let Some(msg) = props.get("stub.stderr") {
        eprintln!("{msg}");
    }
    let code: u8 = props
        .get("stub.exit_code")
        .and_then(|c| c.parse().ok())
        .unwrap_or(0);
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let outcome = match args.first().map(String::as_str) {
        Some("server") => server(&args[1..]).map(|()| ExitCode::SUCCESS),
        Some("init") => init(&args[1..]).map(|()| ExitCode::SUCCESS),
        Some("bench") => bench(&args[1..]),
        _ => Err("usage: dsi-stub server|init|bench ...".into()),
    };
    match outcome {
        Ok(code) => code,
        Err(message) => {
            eprintln!("dsi-stub: {message}");
            ExitCode::FAILURE
        }
    }
}
