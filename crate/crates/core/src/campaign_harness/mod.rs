//! Building targets, running fuzzing campaigns and recording results.

pub mod adapter;
pub mod build;
pub mod builtin;
pub mod matrix;

use std::collections::HashSet;
use std::fs;
use std::io;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use adapter::{BuiltinKind, CrashProbe, Fuzzer, FuzzerAdapter};
pub use build::{build_targets, BuildReport};
pub use builtin::{builtin_marker_fuzzer, builtin_random_fuzzer, Budget, FuzzOutcome};
pub use matrix::{run_matrix, MatrixConfig, MatrixOutcome};

use crate::program_generator::{TargetManifest, CRASH_DIR_ENV};
use crate::target_exec::{run_file, PersistentTarget};

/// Allowed overrun past the timeout before the process group is killed.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

const POLL_INTERVAL: Duration = Duration::from_millis(25);

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("C compiler {compiler:?} not found: {remediation}")]
    CompilerMissing { compiler: String, remediation: String },
    #[error("compiling {name} failed:\n{diagnostics}")]
    CompileError { name: String, diagnostics: String },
    #[error("spawning fuzzer: {0}")]
    SpawnFailure(String),
    #[error("fuzzer misbehaved: {0}")]
    AdapterMisbehavior(String),
    #[error("executing target: {0}")]
    ExecFailure(String),
    #[error("reported crash for {0} did not reproduce the bug marker")]
    Unconfirmed(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("results file: {0}")]
    Csv(#[from] csv::Error),
}

/// A compiled target ready for campaigns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub name: String,
    pub binary: PathBuf,
    pub input_len: usize,
    pub bug_marker: String,
}

impl Target {
    /// Targets for every manifest entry, binaries expected in `bin_dir`.
    pub fn from_manifest(manifest: &TargetManifest, bin_dir: &Path) -> Vec<Target> {
        manifest
            .iter()
            .map(|(name, e)| Target {
                name: name.clone(),
                binary: bin_dir.join(name),
                input_len: e.input_len,
                bug_marker: e.bug_marker.clone(),
            })
            .collect()
    }
}

/// Outcome of one fuzzer x program x trial run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub program: String,
    pub fuzzer: String,
    pub trial: u32,
    pub seed: u64,
    pub completed: bool,
    /// Seconds to the confirmed bug, or the timeout when not completed.
    pub runtime_s: f64,
    pub executions: Option<u64>,
}

impl CampaignResult {
    pub fn key(&self) -> (String, String, u32) {
        (self.program.clone(), self.fuzzer.clone(), self.trial)
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub timeout: Duration,
    /// Execution cap for built-in fuzzers; ignored by external adapters.
    pub max_execs: Option<u64>,
    pub trial: u32,
    pub seed: u64,
    /// Scratch space; each campaign gets its own subdirectory.
    pub work_dir: PathBuf,
    /// Where confirmed crashing inputs are stored.
    pub crash_dir: PathBuf,
}

/// File name of the stored crashing input for a campaign.
pub fn crash_file_name(program: &str, fuzzer: &str, trial: u32) -> String {
    format!("{program}__{fuzzer}__t{trial}.bin")
}

fn round_micros(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e6
}

fn finished(target: &Target, fuzzer: &Fuzzer, opts: &CampaignOptions, runtime: Option<Duration>, executions: Option<u64>) -> CampaignResult {
    let completed = runtime.is_some_and(|r| r <= opts.timeout);
    let runtime = if completed { runtime.unwrap() } else { opts.timeout };
    CampaignResult {
        program: target.name.clone(),
        fuzzer: fuzzer.name().to_string(),
        trial: opts.trial,
        seed: opts.seed,
        completed,
        runtime_s: round_micros(runtime),
        executions,
    }
}

/// Stores `input` and re-runs the target on it; true when the bug marker
/// appears alongside SIGABRT.
fn confirm_and_store(target: &Target, fuzzer: &str, opts: &CampaignOptions, input: &[u8]) -> Result<bool, HarnessError> {
    fs::create_dir_all(&opts.crash_dir)?;
    let path = opts.crash_dir.join(crash_file_name(&target.name, fuzzer, opts.trial));
    fs::write(&path, input)?;
    let outcome = run_file(&target.binary, &path).map_err(|e| HarnessError::ExecFailure(e.to_string()))?;
    if outcome.confirms(&target.bug_marker) {
        Ok(true)
    } else {
        let _ = fs::remove_file(&path);
        Ok(false)
    }
}

/// Runs one campaign until the planted bug is confirmed or the timeout expires.
pub fn run_campaign(target: &Target, fuzzer: &Fuzzer, opts: &CampaignOptions) -> Result<CampaignResult, HarnessError> {
    if !target.binary.is_file() {
        return Err(HarnessError::ExecFailure(format!("target {} is not built", target.binary.display())));
    }
    match fuzzer {
        Fuzzer::Builtin(kind) => run_builtin(target, *kind, fuzzer, opts),
        Fuzzer::External(adapter) => run_external(target, adapter, fuzzer, opts),
    }
}

fn run_builtin(target: &Target, kind: BuiltinKind, fuzzer: &Fuzzer, opts: &CampaignOptions) -> Result<CampaignResult, HarnessError> {
    let mut strategy = builtin::strategy(kind, target.input_len, opts.seed);
    let mut session = PersistentTarget::spawn(&target.binary, target.input_len, strategy.wants_trace())
        .map_err(|e| HarnessError::SpawnFailure(e.to_string()))?;
    // the clock starts once the target has loaded and answered the handshake
    let start = Instant::now();
    let budget = Budget { max_execs: opts.max_execs, deadline: Some(start + opts.timeout) };
    let outcome = builtin::drive(strategy.as_mut(), &mut session, budget)
        .map_err(|e| HarnessError::ExecFailure(e.to_string()))?;
    // time of discovery; confirmation is harness overhead
    let found = start.elapsed();
    drop(session);
    let runtime = match &outcome.crash {
        Some(input) => {
            if !confirm_and_store(target, fuzzer.name(), opts, input)? {
                return Err(HarnessError::Unconfirmed(target.name.clone()));
            }
            Some(found)
        }
        None => None,
    };
    Ok(finished(target, fuzzer, opts, runtime, Some(outcome.executions)))
}

fn kill_group(child: &mut Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure only means it is gone.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.wait();
}

fn probe_files(adapter: &FuzzerAdapter, glob_pattern: Option<&str>, signal_dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = match (&adapter.crash_probe, glob_pattern) {
        (CrashProbe::CrashDir { .. }, Some(pattern)) => glob::glob(pattern)
            .map(|paths| paths.filter_map(Result::ok).filter(|p| p.is_file()).collect())
            .unwrap_or_default(),
        _ => fs::read_dir(signal_dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("crash-"))
                    })
                    .collect()
            })
            .unwrap_or_default(),
    };
    files.sort();
    files
}

/// Sums `execs_done` over AFL-style `fuzzer_stats` files below `out_dir`.
fn read_exec_count(out_dir: &Path) -> Option<u64> {
    let mut total = None;
    let mut stack = vec![(out_dir.to_path_buf(), 0)];
    while let Some((dir, depth)) = stack.pop() {
        let Ok(rd) = fs::read_dir(&dir) else { continue };
        for entry in rd.filter_map(Result::ok) {
            let path = entry.path();
            if path.is_dir() && depth < 2 {
                stack.push((path, depth + 1));
            } else if path.file_name().is_some_and(|n| n == "fuzzer_stats") {
                let text = fs::read_to_string(&path).unwrap_or_default();
                for line in text.lines() {
                    let mut kv = line.splitn(2, ':');
                    if kv.next().map(str::trim) == Some("execs_done") {
                        if let Some(Ok(n)) = kv.next().map(|v| v.trim().parse::<u64>()) {
                            total = Some(total.unwrap_or(0) + n);
                        }
                    }
                }
            }
        }
    }
    total
}

fn run_external(target: &Target, adapter: &FuzzerAdapter, fuzzer: &Fuzzer, opts: &CampaignOptions) -> Result<CampaignResult, HarnessError> {
    adapter.validate()?;
    let scratch = opts
        .work_dir
        .join(&target.name)
        .join(&adapter.name)
        .join(format!("t{}", opts.trial));
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    let corpus_in = scratch.join("in");
    let out_dir = scratch.join("out");
    let signal_dir = scratch.join("signal_crashes");
    fs::create_dir_all(&corpus_in)?;
    fs::create_dir_all(&signal_dir)?;
    fs::write(corpus_in.join("seed"), vec![0u8; target.input_len])?;
    let timeout_s = opts.timeout.as_secs().max(1);
    let vars = adapter::TemplateVars {
        target: &target.binary,
        corpus_in: &corpus_in,
        out_dir: &out_dir,
        timeout_s,
    };
    let command = adapter.render_command(&vars);
    let pattern = adapter.render_glob(&vars);
    let log = fs::File::create(scratch.join("fuzzer.log"))?;

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&command)
        .current_dir(&scratch)
        .envs(&adapter.env)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .process_group(0);
    if adapter.crash_probe == CrashProbe::SignalExit {
        cmd.env(CRASH_DIR_ENV, &signal_dir);
    }
    let cpu_limit = (opts.timeout + KILL_GRACE).as_secs().max(1) as libc::rlim_t;
    // SAFETY: setrlimit is async-signal-safe and touches only the child.
    unsafe {
        cmd.pre_exec(move || {
            let lim = libc::rlimit { rlim_cur: cpu_limit, rlim_max: cpu_limit };
            if libc::setrlimit(libc::RLIMIT_CPU, &lim) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| HarnessError::SpawnFailure(format!("{command}: {e}")))?;

    let mut checked: HashSet<PathBuf> = HashSet::new();
    // Returns the time the first confirmed crash file was observed.
    let check_crashes = |checked: &mut HashSet<PathBuf>| -> Result<Option<Duration>, HarnessError> {
        let seen_at = start.elapsed();
        for file in probe_files(adapter, pattern.as_deref(), &signal_dir) {
            if !checked.insert(file.clone()) {
                continue;
            }
            let Ok(input) = fs::read(&file) else { continue };
            if confirm_and_store(target, &adapter.name, opts, &input)? {
                return Ok(Some(seen_at));
            }
        }
        Ok(None)
    };
    loop {
        if let Some(runtime) = check_crashes(&mut checked)? {
            kill_group(&mut child);
            return Ok(finished(target, fuzzer, opts, Some(runtime), read_exec_count(&out_dir)));
        }
        let elapsed = start.elapsed();
        if let Some(status) = child.try_wait()? {
            if let Some(runtime) = check_crashes(&mut checked)? {
                return Ok(finished(target, fuzzer, opts, Some(runtime), read_exec_count(&out_dir)));
            }
            kill_group(&mut child);
            if elapsed + KILL_GRACE < opts.timeout {
                return Err(HarnessError::AdapterMisbehavior(format!(
                    "{} exited with {status} after {:.1}s without a confirmed crash",
                    adapter.name,
                    elapsed.as_secs_f64()
                )));
            }
            return Ok(finished(target, fuzzer, opts, None, read_exec_count(&out_dir)));
        }
        if elapsed >= opts.timeout {
            kill_group(&mut child);
            return Ok(finished(target, fuzzer, opts, None, read_exec_count(&out_dir)));
        }
        thread::sleep(POLL_INTERVAL);
    }
}
