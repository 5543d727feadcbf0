//! Program x fuzzer x trial scheduling with an append-only, resumable
//! results file.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::{run_campaign, CampaignOptions, CampaignResult, Fuzzer, HarnessError, Target};
use crate::mixer::fnv1a64;

pub const RESULTS_HEADER: [&str; 7] =
    ["program", "fuzzer", "trial", "seed", "completed", "runtime_s", "executions"];

#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub trials: u32,
    pub timeout: Duration,
    pub max_execs: Option<u64>,
    pub jobs: usize,
    pub base_seed: u64,
    pub results_path: PathBuf,
    pub work_dir: PathBuf,
    pub crash_dir: PathBuf,
    /// Keep existing results and skip their cells; otherwise start afresh.
    pub resume: bool,
    /// Stop after this many newly executed cells.
    pub cell_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub program: String,
    pub fuzzer: String,
    pub trial: u32,
}

#[derive(Debug, Default)]
pub struct MatrixOutcome {
    /// Every result in the results file after the run, sorted by key.
    pub results: Vec<CampaignResult>,
    pub failures: Vec<(CellKey, String)>,
    pub executed: usize,
    pub skipped: usize,
}

/// Per-cell seed; independent of scheduling order.
pub fn derive_seed(base_seed: u64, program: &str, fuzzer: &str, trial: u32) -> u64 {
    fnv1a64(format!("{base_seed}/{program}/{fuzzer}/{trial}").as_bytes())
}

pub fn read_results(path: &Path) -> Result<Vec<CampaignResult>, HarnessError> {
    if !path.exists() || fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn sort_results(results: &mut [CampaignResult]) {
    results.sort_by_key(CampaignResult::key);
}

/// Runs every pending cell on a pool of `jobs` workers, appending each result
/// to `results_path` as soon as it finishes.
pub fn run_matrix(targets: &[Target], fuzzers: &[Fuzzer], cfg: &MatrixConfig) -> Result<MatrixOutcome, HarnessError> {
    if cfg.jobs == 0 {
        return Err(HarnessError::Config("jobs must be at least 1".into()));
    }
    if let Some(parent) = cfg.results_path.parent() {
        fs::create_dir_all(parent)?;
    }
    if !cfg.resume && cfg.results_path.exists() {
        fs::remove_file(&cfg.results_path)?;
    }
    let existing = read_results(&cfg.results_path)?;
    let done: BTreeSet<_> = existing.iter().map(CampaignResult::key).collect();

    let mut pending = Vec::new();
    let mut skipped = 0;
    for target in targets {
        for fuzzer in fuzzers {
            for trial in 0..cfg.trials {
                if done.contains(&(target.name.clone(), fuzzer.name().to_string(), trial)) {
                    skipped += 1;
                } else {
                    pending.push((target, fuzzer, trial));
                }
            }
        }
    }
    if let Some(limit) = cfg.cell_limit {
        pending.truncate(limit);
    }

    let needs_header = !cfg.results_path.exists() || fs::metadata(&cfg.results_path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(&cfg.results_path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if needs_header {
        writer.write_record(RESULTS_HEADER)?;
        writer.flush()?;
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(CellKey, Result<CampaignResult, HarnessError>)>();
    let mut failures = Vec::new();
    let mut executed = 0;
    let write_result: Result<(), HarnessError> = thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(pending.len().max(1)) {
            let tx = tx.clone();
            let pending = &pending;
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(target, fuzzer, trial)) = pending.get(i) else { break };
                let opts = CampaignOptions {
                    timeout: cfg.timeout,
                    max_execs: cfg.max_execs,
                    trial,
                    seed: derive_seed(cfg.base_seed, &target.name, fuzzer.name(), trial),
                    work_dir: cfg.work_dir.clone(),
                    crash_dir: cfg.crash_dir.clone(),
                };
                let key = CellKey {
                    program: target.name.clone(),
                    fuzzer: fuzzer.name().to_string(),
                    trial,
                };
                if tx.send((key, run_campaign(target, fuzzer, &opts))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (key, res) in rx {
            match res {
                Ok(result) => {
                    writer.serialize(&result)?;
                    writer.flush()?;
                    executed += 1;
                }
                Err(e) => failures.push((key, e.to_string())),
            }
        }
        Ok(())
    });
    write_result?;
    drop(writer);

    let mut results = read_results(&cfg.results_path)?;
    sort_results(&mut results);
    failures.sort();
    Ok(MatrixOutcome { results, failures, executed, skipped })
}
