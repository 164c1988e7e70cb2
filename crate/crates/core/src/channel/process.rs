use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{ChannelError, CommandResult, started};

type Buffer = Arc<Mutex<Vec<u8>>>;

fn pump(mut source: impl Read + Send + 'static, sink: Buffer, done: mpsc::Sender<()>) {
    thread::spawn(move || {
        let mut chunk = [0u8; 8192];
        loop {
            match source.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => sink.lock().unwrap().extend_from_slice(&chunk[..n]),
            }
        }
        let _ = done.send(());
    });
}

fn text(buffer: &Buffer) -> String {
    String::from_utf8_lossy(&buffer.lock().unwrap()).into_owned()
}

/// Spawns `argv` in its own process group, capturing stdout and stderr
/// separately. On timeout the whole group is killed and the partial output
/// is returned inside the error.
pub fn run_process(
    host: &str,
    argv: &[String],
    cwd: Option<&Path>,
    env: &BTreeMap<String, String>,
    timeout: Duration,
) -> Result<CommandResult, ChannelError> {
    let display = argv.join(" ");
    let (program, args) = argv.split_first().ok_or_else(|| ChannelError::Spawn {
        host: host.to_owned(),
        command: display.clone(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty argument vector"),
    })?;
    let mut command = Command::new(program);
    command
        .args(args)
        .envs(env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(dir) = cwd {
        command.current_dir(dir);
    }
    let (started_at, clock) = started();
    let mut child = command.spawn().map_err(|source| ChannelError::Spawn {
        host: host.to_owned(),
        command: display.clone(),
        source,
    })?;
    let stdout: Buffer = Arc::default();
    let stderr: Buffer = Arc::default();
    let (done_tx, done_rx) = mpsc::channel();
    pump(child.stdout.take().expect("piped"), stdout.clone(), done_tx.clone());
    pump(child.stderr.take().expect("piped"), stderr.clone(), done_tx);

    let deadline = clock + timeout;
    let mut pause = Duration::from_millis(1);
    let status = loop {
        if let Some(status) = child.try_wait().ok().flatten() {
            break Some(status);
        }
        if Instant::now() >= deadline {
            kill_group(child.id());
            let _ = child.wait();
            break None;
        }
        thread::sleep(pause.min(deadline.saturating_duration_since(Instant::now())));
        pause = (pause * 2).min(Duration::from_millis(20));
    };

    // Background grandchildren may hold the pipes open; do not wait past the deadline.
    let grace = if status.is_some() {
        deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(50))
    } else {
        Duration::from_millis(200)
    };
    let drain_deadline = Instant::now() + grace;
    for _ in 0..2 {
        let left = drain_deadline.saturating_duration_since(Instant::now());
        if done_rx.recv_timeout(left).is_err() {
            break;
        }
    }

    let result = CommandResult {
        command: display,
        exit_code: status
            .map(|s| s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0)))
            .unwrap_or(-1),
        stdout: text(&stdout),
        stderr: text(&stderr),
        duration: clock.elapsed().as_secs_f64(),
        started_at,
    };
    match status {
        Some(_) => Ok(result),
        None => Err(ChannelError::Timeout {
            host: host.to_owned(),
            partial: Box::new(result),
        }),
    }
}

fn kill_group(pid: u32) {
    // SAFETY: killpg only sends a signal; the group was created for this child.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}
