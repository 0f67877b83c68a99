use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Classification, ClassifierBackend, Label};
use crate::error::{Error, Result};
use crate::tiler::Patch;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Serialize)]
struct Request<'a> {
    patch_id: &'a str,
    width: usize,
    height: usize,
    rgb_base64: String,
}

#[derive(Deserialize)]
struct Response {
    patch_id: String,
    label: Label,
    confidence: f64,
}

/// Runs a shell command that speaks the NDJSON classifier protocol: one
/// request per line on stdin, one response per line on stdout, in any order.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub command: String,
    /// Maximum wait for each response line and for the final exit.
    pub timeout: Duration,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalBackend {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    fn spawn(&self) -> Result<Child> {
        Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .process_group(0)
            .spawn()
            .map_err(|e| Error::Backend {
                patch_id: None,
                message: format!("cannot launch {:?}: {e}", self.command),
            })
    }
}

fn backend(patch_id: Option<&str>, message: impl Into<String>) -> Error {
    Error::Backend {
        patch_id: patch_id.map(str::to_string),
        message: message.into(),
    }
}

/// Kills the shell and everything it started. The child leads its own process
/// group, so a model launched by `sh -c` does not outlive a failed run.
fn kill_group(child: &mut Child) {
    // SAFETY: plain syscall on a pid we spawned and have not yet reaped.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Waits for exit up to `timeout`, killing the child afterwards.
fn wait_exit(child: &mut Child, timeout: Duration) -> Option<std::process::ExitStatus> {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(s)) => return Some(s),
            Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
            _ => {
                kill_group(child);
                return None;
            }
        }
    }
}

impl ClassifierBackend for ExternalBackend {
    fn name(&self) -> &str {
        &self.command
    }

    fn classify(&self, patches: &[Patch]) -> Result<Vec<Classification>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let mut child = self.spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let requests: Vec<String> = patches
            .iter()
            .map(|p| {
                serde_json::to_string(&Request {
                    patch_id: &p.patch_id,
                    width: p.size,
                    height: p.size,
                    rgb_base64: base64::engine::general_purpose::STANDARD.encode(&p.pixels),
                })
                .expect("request serializes")
            })
            .collect();
        // a child that exits early closes the pipe; the reader side reports it
        let writer = std::thread::spawn(move || {
            let mut w = BufWriter::new(stdin);
            for r in requests {
                if writeln!(w, "{r}").is_err() {
                    return;
                }
            }
            let _ = w.flush();
        });
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() || end {
                    return;
                }
            }
        });

        let index: HashMap<&str, usize> =
            patches.iter().enumerate().map(|(i, p)| (p.patch_id.as_str(), i)).collect();
        let mut out: Vec<Option<Classification>> = vec![None; patches.len()];
        let mut pending = patches.len();
        let first_pending =
            |out: &[Option<Classification>]| out.iter().position(Option::is_none).map(|i| patches[i].patch_id.as_str());

        let outcome = loop {
            if pending == 0 {
                break Ok(());
            }
            let line = match rx.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => break Err(backend(first_pending(&out), format!("reading stdout: {e}"))),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    break Err(backend(
                        first_pending(&out),
                        format!("no response within {:?}", self.timeout),
                    ))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    let status = wait_exit(&mut child, self.timeout);
                    let id = first_pending(&out);
                    break Err(match status {
                        Some(s) if !s.success() => backend(id, format!("classifier exited with {s}")),
                        _ => backend(id, format!("classifier closed its output with {pending} responses missing")),
                    });
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    // name the patch if the id is still recoverable
                    let id = serde_json::from_str::<serde_json::Value>(&line)
                        .ok()
                        .and_then(|v| v.get("patch_id")?.as_str().map(str::to_string));
                    let id = id.as_deref().or(first_pending(&out));
                    break Err(backend(id, format!("malformed response {line:?}: {e}")));
                }
            };
            let Some(&i) = index.get(resp.patch_id.as_str()) else {
                break Err(backend(Some(&resp.patch_id), "response for unknown patch"));
            };
            if out[i].is_some() {
                break Err(backend(Some(&resp.patch_id), "duplicate response"));
            }
            if !(0.0..=1.0).contains(&resp.confidence) {
                break Err(backend(
                    Some(&resp.patch_id),
                    format!("confidence {} outside [0, 1]", resp.confidence),
                ));
            }
            out[i] = Some(Classification {
                patch_id: resp.patch_id,
                label: resp.label,
                confidence: resp.confidence,
            });
            pending -= 1;
        };

        if let Err(e) = outcome {
            kill_group(&mut child);
            return Err(e);
        }
        let _ = writer.join();
        match wait_exit(&mut child, self.timeout) {
            Some(s) if s.success() => Ok(out.into_iter().map(|c| c.expect("all answered")).collect()),
            Some(s) => Err(backend(None, format!("classifier exited with {s} after answering"))),
            None => Err(backend(None, format!("classifier did not exit within {:?}", self.timeout))),
        }
    }
}
