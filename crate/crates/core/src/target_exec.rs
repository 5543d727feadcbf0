//! Running compiled targets: one-shot runs, persistent sessions and batch
//! hit counting.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::os::unix::process::ExitStatusExt;
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::thread;

use crate::program_generator::TRACE_ENV;

/// Result of one ordinary (non-persistent) target execution.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutcome {
    pub fn aborted(&self) -> bool {
        self.status.signal() == Some(libc::SIGABRT)
    }

    /// SIGABRT with `marker` printed as a full stderr line.
    pub fn confirms(&self, marker: &str) -> bool {
        self.aborted() && self.stderr.lines().any(|l| l == marker)
    }

    /// `This is branch N` markers in stdout order.
    pub fn markers(&self) -> Vec<u64> {
        self.stdout.lines().filter_map(parse_marker).collect()
    }
}

fn parse_marker(line: &str) -> Option<u64> {
    line.strip_prefix("This is branch ")?.trim().parse().ok()
}

/// Runs `binary` once with `input` on stdin.
pub fn run_once(binary: &Path, input: &[u8], trace: bool) -> io::Result<RunOutcome> {
    let mut child = Command::new(binary)
        .env(TRACE_ENV, if trace { "1" } else { "0" })
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let data = input.to_vec();
    let writer = thread::spawn(move || {
        // The target may stop reading early; a broken pipe is not an error here.
        let _ = stdin.write_all(&data);
    });
    let output = child.wait_with_output()?;
    let _ = writer.join();
    Ok(RunOutcome {
        status: output.status,
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    })
}

/// Runs `binary` with a file path argument, the way file-based fuzzers do.
pub fn run_file(binary: &Path, input_file: &Path) -> io::Result<RunOutcome> {
    let output = Command::new(binary)
        .arg(input_file)
        .env(TRACE_ENV, "0")
        .stdin(Stdio::null())
        .output()?;
    Ok(RunOutcome {
        status: output.status,
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    })
}

/// Feedback from one persistent-mode execution.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecFeedback {
    pub hit: bool,
    pub markers: Vec<u64>,
}

/// A target running in `--persistent` mode, fed one record at a time.
pub struct PersistentTarget {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    input_len: usize,
    line: String,
}

impl PersistentTarget {
    pub fn spawn(binary: &Path, input_len: usize, trace: bool) -> io::Result<Self> {
        let mut child = Command::new(binary)
            .arg("--persistent")
            .env(TRACE_ENV, if trace { "1" } else { "0" })
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut target = Self { child, stdin, stdout, input_len, line: String::new() };
        // wait for the handshake so callers can time fuzzing separately from loading
        target.line.clear();
        target.stdout.read_line(&mut target.line)?;
        if target.line.trim_end() != "@@ ready" {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{} did not start in persistent mode", binary.display()),
            ));
        }
        Ok(target)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn exec(&mut self, input: &[u8]) -> io::Result<ExecFeedback> {
        if input.len() != self.input_len {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record of {} bytes, target reads {}", input.len(), self.input_len),
            ));
        }
        self.stdin.write_all(input)?;
        self.stdin.flush()?;
        let mut feedback = ExecFeedback::default();
        loop {
            self.line.clear();
            if self.stdout.read_line(&mut self.line)? == 0 {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "persistent target exited mid-record",
                ));
            }
            let line = self.line.trim_end();
            if let Some(flag) = line.strip_prefix("@@ ") {
                feedback.hit = flag == "1";
                return Ok(feedback);
            }
            if let Some(m) = parse_marker(line) {
                feedback.markers.push(m);
            }
        }
    }
}

impl Drop for PersistentTarget {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Feeds concatenated fixed-length records to `--count` mode and returns
/// `(hits, runs)`.
pub fn count_hits(binary: &Path, records: Vec<u8>) -> io::Result<(u64, u64)> {
    let mut child = Command::new(binary)
        .arg("--count")
        .env(TRACE_ENV, "0")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || stdin.write_all(&records));
    let mut out = String::new();
    child.stdout.take().expect("piped stdout").read_to_string(&mut out)?;
    let status = child.wait()?;
    writer
        .join()
        .map_err(|_| io::Error::other("writer thread panicked"))??;
    if !status.success() {
        return Err(io::Error::other(format!("count mode exited with {status}")));
    }
    let mut fields = out.split_whitespace().map(str::parse::<u64>);
    match (fields.next(), fields.next()) {
        (Some(Ok(hits)), Some(Ok(runs))) => Ok((hits, runs)),
        _ => Err(io::Error::other(format!("unparseable count output {out:?}"))),
    }
}
