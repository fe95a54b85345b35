//! Supervised subprocesses: command templates are split shell-style (no
//! shell is involved), output is captured on reader threads and the child
//! is killed when it outlives its timeout.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

#[derive(Debug, thiserror::Error)]
pub enum ProcError {
    #[error("command template `{0}` is not valid shell syntax")]
    BadTemplate(String),
    #[error("empty command template")]
    Empty,
    #[error("cannot start `{program}`: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcOutput {
    /// `None` when the process was killed or ended by a signal.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
}

impl ProcOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }

    pub fn combined(&self) -> String {
        let mut s = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !s.is_empty() && !s.ends_with('\n') {
                s.push('\n');
            }
            s.push_str(&self.stderr);
        }
        s
    }
}

/// Splits `template` into argv and substitutes `{name}` placeholders inside
/// each word, so substituted paths containing spaces stay one argument.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> Result<Vec<String>, ProcError> {
    let words = shlex::split(template).ok_or_else(|| ProcError::BadTemplate(template.to_string()))?;
    if words.is_empty() {
        return Err(ProcError::Empty);
    }
    Ok(words
        .into_iter()
        .map(|w| {
            vars.iter()
                .fold(w, |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        })
        .collect())
}

pub fn run(argv: &[String], cwd: &Path, timeout: Duration) -> Result<ProcOutput, ProcError> {
    let (program, args) = argv.split_first().ok_or(ProcError::Empty)?;
    let mut cmd = Command::new(program);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        // own process group so a timeout also reaps grandchildren holding the pipes
        cmd.process_group(0);
    }
    let mut child = cmd
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ProcError::Spawn {
            program: program.clone(),
            source,
        })?;
    let mut out = child.stdout.take().expect("piped stdout");
    let mut err = child.stderr.take().expect("piped stderr");
    let out_t = thread::spawn(move || {
        let mut b = Vec::new();
        let _ = out.read_to_end(&mut b);
        b
    });
    let err_t = thread::spawn(move || {
        let mut b = Vec::new();
        let _ = err.read_to_end(&mut b);
        b
    });
    let (exit_code, timed_out) = match child.wait_timeout(timeout) {
        Ok(Some(status)) => (status.code(), false),
        Ok(None) | Err(_) => {
            #[cfg(unix)]
            if let Ok(pgid) = libc::pid_t::try_from(child.id()) {
                if pgid > 1 {
                    // SAFETY: plain syscall on a process group we created.
                    unsafe {
                        libc::killpg(pgid, libc::SIGKILL);
                    }
                }
            }
            let _ = child.kill();
            let _ = child.wait();
            (None, true)
        }
    };
    let stdout = String::from_utf8_lossy(&out_t.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_t.join().unwrap_or_default()).into_owned();
    Ok(ProcOutput {
        exit_code,
        stdout,
        stderr,
        timed_out,
    })
}
