use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::corpus::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    pub timeout_s: f64,
    /// RLIMIT_AS for the oracle process tree.
    pub max_memory_bytes: Option<u64>,
    /// RLIMIT_CPU, in seconds.
    pub max_cpu_seconds: Option<u64>,
    /// Run oracles in a fresh network namespace when `unshare` allows it.
    pub deny_network: bool,
    /// Bytes of stdout and stderr kept per oracle run.
    pub max_log_bytes: usize,
    /// Parent for the per-oracle temp workdirs; system temp dir if unset.
    pub scratch_dir: Option<std::path::PathBuf>,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            timeout_s: 60.0,
            max_memory_bytes: None,
            max_cpu_seconds: None,
            deny_network: true,
            max_log_bytes: 64 * 1024,
            scratch_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub passed: bool,
    pub timed_out: bool,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub duration_ms: u64,
    pub stdout: String,
    pub stderr: String,
}

impl OracleRun {
    pub fn log_text(&self, command: &str) -> String {
        format!(
            "command: {command}\nexit_code: {}\nsignal: {}\ntimed_out: {}\nduration_ms: {}\n--- stdout ---\n{}\n--- stderr ---\n{}\n",
            self.exit_code.map_or("none".into(), |c| c.to_string()),
            self.signal.map_or("none".into(), |c| c.to_string()),
            self.timed_out,
            self.duration_ms,
            self.stdout,
            self.stderr
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub functional: OracleRun,
    pub security: OracleRun,
}

/// Whether `unshare -rn` works here. Probed once per process.
fn network_isolation_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        let ok = Command::new("unshare")
            .args(["-rn", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if !ok {
            tracing::warn!("unshare -rn unavailable; oracles will run with network access");
        }
        ok
    })
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "/._-+:@%".contains(c)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// Substitutes `{completion_file}` and `{workdir}` with shell-quoted paths.
pub(crate) fn render_command(template: &str, completion_file: &Path, workdir: &Path) -> String {
    template
        .replace("{completion_file}", &shell_quote(&completion_file.to_string_lossy()))
        .replace("{workdir}", &shell_quote(&workdir.to_string_lossy()))
}

pub(crate) fn wrap_completion(task: &TaskSpec, completion: &str) -> String {
    match &task.scaffold {
        Some(s) => s.replace("{completion}", completion),
        None => completion.to_string(),
    }
}

fn drain(mut src: impl Read + Send + 'static, limit: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut dropped = 0usize;
        loop {
            match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                    dropped += n.saturating_sub(room);
                }
            }
        }
        let mut s = String::from_utf8_lossy(&kept).into_owned();
        if dropped > 0 {
            s.push_str(&format!("\n[... {dropped} bytes truncated]"));
        }
        s
    })
}

fn kill_group(child: &Child) {
    // the child leads its own process group
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
}

fn spawn_sandboxed(command: &str, workdir: &Path, policy: &SandboxPolicy) -> std::io::Result<Child> {
    let mut cmd = if policy.deny_network && network_isolation_available() {
        let mut c = Command::new("unshare");
        c.args(["-rn", "sh", "-c", command]);
        c
    } else {
        let mut c = Command::new("sh");
        c.args(["-c", command]);
        c
    };
    cmd.current_dir(workdir)
        .env("HOME", workdir)
        .env("TMPDIR", workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let mem = policy.max_memory_bytes;
    let cpu = policy.max_cpu_seconds;
    unsafe {
        cmd.pre_exec(move || {
            if let Some(m) = mem {
                let lim = libc::rlimit {
                    rlim_cur: m as libc::rlim_t,
                    rlim_max: m as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
            }
            if let Some(c) = cpu {
                let lim = libc::rlimit {
                    rlim_cur: c as libc::rlim_t,
                    rlim_max: c as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_CPU, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }
    cmd.spawn()
}

/// Runs one oracle command in its own fresh workdir holding the wrapped
/// completion. Exit code 0 passes; anything else, a signal or the wall
/// timeout fails.
pub(crate) fn run_one(
    task: &TaskSpec,
    template: &str,
    completion: &str,
    policy: &SandboxPolicy,
) -> Result<(OracleRun, String), RunnerError> {
    let setup = |e: std::io::Error| RunnerError::SandboxSetupFailure(e.to_string());
    let dir = match &policy.scratch_dir {
        Some(p) => {
            std::fs::create_dir_all(p).map_err(setup)?;
            tempfile::Builder::new().prefix("oracle-").tempdir_in(p)
        }
        None => tempfile::Builder::new().prefix("oracle-").tempdir(),
    }
    .map_err(setup)?;
    let completion_file = dir
        .path()
        .join(format!("completion.{}", task.language.file_extension()));
    std::fs::write(&completion_file, wrap_completion(task, completion)).map_err(setup)?;
    let command = render_command(template, &completion_file, dir.path());

    let started = Instant::now();
    let mut child = spawn_sandboxed(&command, dir.path(), policy).map_err(setup)?;
    let out = drain(child.stdout.take().expect("piped stdout"), policy.max_log_bytes);
    let err = drain(child.stderr.take().expect("piped stderr"), policy.max_log_bytes);
    let deadline = Duration::from_secs_f64(policy.timeout_s.max(0.0));

    let mut timed_out = false;
    let mut poll = Duration::from_millis(1);
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break s,
            Ok(None) => {}
            Err(e) => {
                kill_group(&child);
                return Err(setup(e));
            }
        }
        if started.elapsed() >= deadline {
            timed_out = true;
            kill_group(&child);
            break child.wait().map_err(setup)?;
        }
        thread::sleep(poll);
        poll = (poll * 2).min(Duration::from_millis(20));
    };
    // stragglers in the group would keep the pipes open
    kill_group(&child);
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();

    let run = OracleRun {
        passed: !timed_out && status.code() == Some(0),
        timed_out,
        exit_code: status.code(),
        signal: status.signal(),
        duration_ms: started.elapsed().as_millis() as u64,
        stdout,
        stderr,
    };
    Ok((run, command))
}

/// Runs both oracles; the security oracle runs even when the functional
/// one fails.
pub fn run_oracles(
    task: &TaskSpec,
    completion: &str,
    policy: &SandboxPolicy,
) -> Result<OracleVerdict, RunnerError> {
    let (functional, _) = run_one(task, &task.functional_oracle, completion, policy)?;
    let (security, _) = run_one(task, &task.security_oracle, completion, policy)?;
    Ok(OracleVerdict { functional, security })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageId;

    fn task(func: &str, sec: &str, scaffold: Option<&str>) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            language: LanguageId::Py,
            cwe: "CWE-022".into(),
            prompt: "p".into(),
            functional_oracle: func.into(),
            security_oracle: sec.into(),
            scaffold: scaffold.map(str::to_string),
        }
    }

    fn quick() -> SandboxPolicy {
        SandboxPolicy {
            timeout_s: 5.0,
            deny_network: false,
            ..SandboxPolicy::default()
        }
    }

    #[test]
    fn both_pass() {
        let v = run_oracles(&task("exit 0", "exit 0", None), "x", &quick()).unwrap();
        assert!(v.functional.passed && v.security.passed);
    }

    #[test]
    fn security_fails_independently() {
        let v = run_oracles(&task("exit 0", "exit 1", None), "x", &quick()).unwrap();
        assert!(v.functional.passed);
        assert!(!v.security.passed);
        assert_eq!(v.security.exit_code, Some(1));
    }

    #[test]
    fn security_runs_after_functional_failure() {
        let v = run_oracles(&task("exit 3", "echo ran; exit 0", None), "x", &quick()).unwrap();
        assert!(!v.functional.passed);
        assert!(v.security.passed);
        assert_eq!(v.security.stdout.trim(), "ran");
    }

    #[test]
    fn timeout_is_a_flagged_failure() {
        let policy = SandboxPolicy {
            timeout_s: 0.3,
            ..quick()
        };
        let started = Instant::now();
        let v = run_oracles(&task("exit 0", "sleep 30", None), "x", &policy).unwrap();
        assert!(v.functional.passed && !v.functional.timed_out);
        assert!(!v.security.passed);
        assert!(v.security.timed_out);
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn timeout_kills_background_children() {
        let policy = SandboxPolicy {
            timeout_s: 0.3,
            ..quick()
        };
        let started = Instant::now();
        let v = run_oracles(&task("sleep 30 & sleep 30", "exit 0", None), "x", &policy).unwrap();
        assert!(v.functional.timed_out);
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn completion_written_inside_scaffold() {
        let t = task(
            "grep -q 'BEGIN body END' {completion_file}",
            "test \"$(basename {completion_file})\" = completion.py && test -d {workdir}",
            Some("BEGIN {completion} END"),
        );
        let v = run_oracles(&t, "body", &quick()).unwrap();
        assert!(v.functional.passed, "{}", v.functional.stderr);
        assert!(v.security.passed, "{}", v.security.stderr);
    }

    #[test]
    fn workdirs_are_fresh_per_oracle() {
        let t = task("touch {workdir}/marker", "test ! -e {workdir}/marker", None);
        let v = run_oracles(&t, "x", &quick()).unwrap();
        assert!(v.functional.passed && v.security.passed);
    }

    #[test]
    fn logs_truncated() {
        let policy = SandboxPolicy {
            max_log_bytes: 10,
            ..quick()
        };
        let v = run_oracles(&task("yes | head -c 5000", "exit 0", None), "x", &policy).unwrap();
        assert!(v.functional.stdout.starts_with("y\ny\ny\ny\ny\n"));
        assert!(v.functional.stdout.contains("4990 bytes truncated"));
    }

    #[test]
    fn quoting_survives_spaces() {
        let dir = tempfile::tempdir().unwrap();
        let spaced = dir.path().join("with space");
        let policy = SandboxPolicy {
            scratch_dir: Some(spaced),
            ..quick()
        };
        let v = run_oracles(&task("test -f {completion_file}", "cd {workdir}", None), "x", &policy).unwrap();
        assert!(v.functional.passed && v.security.passed);
    }

    #[test]
    fn cpu_limit_applies() {
        let policy = SandboxPolicy {
            max_cpu_seconds: Some(1),
            ..quick()
        };
        let v = run_oracles(&task("ulimit -t", "exit 0", None), "x", &policy).unwrap();
        assert_eq!(v.functional.stdout.trim(), "1");
    }
}
