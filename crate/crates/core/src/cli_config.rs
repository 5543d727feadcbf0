//! Pipeline configuration and the `featbench` subcommands.
//!
//! Every stage reads and writes a single output root:
//!
//! ```text
//! <out>/featbench.toml     resolved configuration
//! <out>/grid.json          program specs
//! <out>/targets.json       name -> {file, input_len, bug_marker}
//! <out>/src/*.c  build.sh  generated sources
//! <out>/bin/               compiled targets, build_report.csv
//! <out>/validation.csv     oracle checks
//! <out>/results.csv        campaign results, crashes/ and work/
//! <out>/report.md  report.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campaign_harness::adapter::{load_adapters, select_fuzzers};
use crate::campaign_harness::matrix::read_results;
use crate::campaign_harness::{build_targets, run_matrix, HarnessError, MatrixConfig, Target};
use crate::feature_model::{default_grid, grid_manifest_json, parse_grid_manifest, Parameter, ProgramSpec, GRID_VERSION};
use crate::ground_truth::{analytic_probability, monte_carlo_probability, probability_f64, witness_input, OracleError};
use crate::program_generator::{emit_all, GenError, TargetManifest};
use crate::stats_analysis::{analyze, render_table, Aggregate, AnalysisOptions, Significance, StatsError, TableFormat};
use crate::target_exec::run_once;

pub const CONFIG_FILE: &str = "featbench.toml";
pub const GRID_FILE: &str = "grid.json";
pub const TARGETS_FILE: &str = "targets.json";
pub const BUILD_REPORT: &str = "build_report.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";

/// Monte-Carlo deviations beyond this many standard errors fail validation.
pub const VALIDATION_SIGMAS: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Generate(#[from] GenError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// The stage finished but some items failed.
    #[error("{0}")]
    Partial(String),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Harness(HarnessError::Config(_) | HarnessError::CompilerMissing { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn default_out() -> PathBuf {
    PathBuf::from("featbench-out")
}
fn default_timeout() -> u64 {
    300
}
fn default_trials() -> u32 {
    3
}
fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
fn default_mc_trials() -> u64 {
    100_000
}
fn default_fuzzers() -> Vec<String> {
    vec!["random".into()]
}

/// Settings shared by all stages. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Grid manifest to use instead of the built-in grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapters: Option<PathBuf>,
    #[serde(default = "default_fuzzers")]
    pub fuzzers: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Base seed for campaigns.
    #[serde(default)]
    pub seed: u64,
    /// Execution cap for the built-in fuzzers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_execs: Option<u64>,
    /// Restrict `run` to the sweeps of these parameter labels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<String>,
    #[serde(default = "default_mc_trials")]
    pub mc_trials: u64,
    #[serde(default)]
    pub mc_seed: u64,
    #[serde(default)]
    pub aggregate: Aggregate,
    /// Permutation-test significance instead of the t approximation.
    #[serde(default)]
    pub permutation: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.out);
        if let Some(g) = cfg.grid.as_mut() {
            rebase(g);
        }
        if let Some(a) = cfg.adapters.as_mut() {
            rebase(a);
        }
        Ok(cfg)
    }

    /// Makes paths absolute and checks everything that can be checked
    /// before a stage starts.
    pub fn resolve(mut self) -> Result<Self, PipelineError> {
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())));
        self.out = abs(&self.out)?;
        for (what, p) in [("grid", &mut self.grid), ("adapters", &mut self.adapters)] {
            if let Some(path) = p {
                *path = abs(path)?;
                if !path.is_file() {
                    return Err(PipelineError::Config(format!("{what} file {} does not exist", path.display())));
                }
            }
        }
        if self.jobs == 0 {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        if self.timeout_s == 0 {
            return Err(PipelineError::Config("timeout_s must be positive".into()));
        }
        if self.fuzzers.is_empty() {
            return Err(PipelineError::Config("no fuzzers selected".into()));
        }
        for label in &self.sweeps {
            if Parameter::from_label(label).is_none() {
                return Err(PipelineError::Config(format!("unknown parameter {label:?}")));
            }
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the resolved configuration into the output root.
    pub fn write_copy(&self) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let path = self.path(CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(io_err(&path))
    }

    /// The configured grid: the manifest file or the built-in grid.
    pub fn load_grid(&self) -> Result<Vec<ProgramSpec>, PipelineError> {
        match &self.grid {
            None => Ok(default_grid()),
            Some(path) => read_grid(path),
        }
    }

    fn generated_grid(&self) -> Result<Vec<ProgramSpec>, PipelineError> {
        let path = self.path(GRID_FILE);
        if !path.is_file() {
            return Err(PipelineError::Config(format!("{} missing; run `featbench generate` first", path.display())));
        }
        read_grid(&path)
    }

    fn manifest(&self) -> Result<TargetManifest, PipelineError> {
        let path = self.path(TARGETS_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|_| PipelineError::Config(format!("{} missing; run `featbench generate` first", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

fn read_grid(path: &Path) -> Result<Vec<ProgramSpec>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    parse_grid_manifest(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the built-in grid manifest.
pub fn grid_hash() -> String {
    hex::encode(Sha256::digest(grid_manifest_json(&default_grid()).as_bytes()))
}

pub fn version_string() -> String {
    format!("{} ({GRID_VERSION} sha256:{})", env!("CARGO_PKG_VERSION"), grid_hash())
}

/// Writes the grid manifest, sources, `targets.json` and `build.sh`.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<usize, PipelineError> {
    let grid = cfg.load_grid()?;
    let suite = emit_all(&grid)?;
    cfg.write_copy()?;
    let src = cfg.path("src");
    if src.exists() {
        fs::remove_dir_all(&src).map_err(io_err(&src))?;
    }
    suite.write_to(&cfg.out)?;
    let grid_path = cfg.path(GRID_FILE);
    fs::write(&grid_path, grid_manifest_json(&grid)).map_err(io_err(&grid_path))?;
    Ok(suite.units.len())
}

/// Compiles every generated target into `bin/`; fails partially when any
/// target does not compile.
pub fn cmd_build(cfg: &PipelineConfig) -> Result<usize, PipelineError> {
    let manifest = cfg.manifest()?;
    cfg.write_copy()?;
    let report = build_targets(&manifest, &cfg.out, &cfg.path("bin"))?;
    let path = cfg.path(BUILD_REPORT);
    fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    let failed: Vec<_> = report.failed().map(|e| e.name.clone()).collect();
    if failed.is_empty() {
        Ok(report.built())
    } else {
        Err(PipelineError::Partial(format!("{} targets failed to compile: {}", failed.len(), failed.join(", "))))
    }
}

/// One line of `validation.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub name: String,
    pub analytic_p: f64,
    /// Empty when Monte-Carlo is disabled.
    pub mc_estimate: Option<f64>,
    /// Empty for programs that cannot trigger (probability zero).
    pub witness_ok: Option<bool>,
}

impl ValidationRow {
    pub fn ok(&self, mc_trials: u64) -> bool {
        let witness_ok = self.witness_ok.unwrap_or(self.analytic_p == 0.0);
        let mc_ok = self.mc_estimate.is_none_or(|est| {
            let p = self.analytic_p;
            let n = mc_trials as f64;
            if p == 0.0 {
                return est == 0.0;
            }
            // below one expected hit the binomial band is floored at p = 1/n
            let se = (p.max(1.0 / n) * (1.0 - p) / n).sqrt();
            (est - p).abs() <= VALIDATION_SIGMAS * se
        });
        witness_ok && mc_ok
    }
}

fn validate_one(spec: &ProgramSpec, target: &Path, marker: &str, cfg: &PipelineConfig) -> ValidationRow {
    let analytic_p = analytic_probability(spec).map(|p| probability_f64(&p)).unwrap_or(f64::NAN);
    let mc_estimate = (cfg.mc_trials > 0).then(|| {
        let seed = cfg.mc_seed ^ crate::mixer::fnv1a64(spec.name().as_bytes());
        monte_carlo_probability(target, spec, cfg.mc_trials, seed).map_or(f64::NAN, |e| e.estimate())
    });
    let witness_ok = match witness_input(spec) {
        Ok(w) => Some(run_once(target, &w, false).is_ok_and(|o| o.confirms(marker))),
        Err(OracleError::NoWitness(_)) => None,
        Err(_) => Some(false),
    };
    ValidationRow { name: spec.name(), analytic_p, mc_estimate, witness_ok }
}

/// Checks every built target against the oracle and writes `validation.csv`.
pub fn cmd_validate(cfg: &PipelineConfig) -> Result<Vec<ValidationRow>, PipelineError> {
    let grid = cfg.generated_grid()?;
    let manifest = cfg.manifest()?;
    cfg.write_copy()?;
    let bin = cfg.path("bin");
    let rows: Vec<ValidationRow> = grid
        .par_iter()
        .map(|spec| {
            let name = spec.name();
            let entry = manifest
                .get(&name)
                .ok_or_else(|| PipelineError::Config(format!("{name} missing from {TARGETS_FILE}")))?;
            Ok(validate_one(spec, &bin.join(&name), &entry.bug_marker, cfg))
        })
        .collect::<Result<_, PipelineError>>()?;
    let path = cfg.path(VALIDATION_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::Harness(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| PipelineError::Harness(e.into()))?;
    }
    w.flush().map_err(io_err(&path))?;
    let bad: Vec<_> = rows.iter().filter(|r| !r.ok(cfg.mc_trials)).map(|r| r.name.as_str()).collect();
    if bad.is_empty() {
        Ok(rows)
    } else {
        Err(PipelineError::Partial(format!("{} programs failed validation: {}", bad.len(), bad.join(", "))))
    }
}

/// Targets selected for campaigns: the configured sweeps, or the whole grid.
pub fn campaign_targets(cfg: &PipelineConfig) -> Result<Vec<Target>, PipelineError> {
    let grid = cfg.generated_grid()?;
    let manifest = cfg.manifest()?;
    let params: Vec<Parameter> = cfg.sweeps.iter().filter_map(|l| Parameter::from_label(l)).collect();
    let bin = cfg.path("bin");
    let mut targets = Vec::new();
    for spec in &grid {
        if !params.is_empty() && !params.iter().any(|p| p.in_sweep(spec)) {
            continue;
        }
        let name = spec.name();
        let entry = manifest
            .get(&name)
            .ok_or_else(|| PipelineError::Config(format!("{name} missing from {TARGETS_FILE}")))?;
        let binary = bin.join(&name);
        if !binary.is_file() {
            return Err(PipelineError::Config(format!("{} not built; run `featbench build` first", binary.display())));
        }
        targets.push(Target { name, binary, input_len: entry.input_len, bug_marker: entry.bug_marker.clone() });
    }
    Ok(targets)
}

/// Runs the campaign matrix into `results.csv`.
pub fn cmd_run(cfg: &PipelineConfig, resume: bool) -> Result<usize, PipelineError> {
    let adapters = match &cfg.adapters {
        Some(path) => load_adapters(path)?,
        None => Vec::new(),
    };
    let fuzzers = select_fuzzers(&cfg.fuzzers, &adapters)?;
    let targets = campaign_targets(cfg)?;
    cfg.write_copy()?;
    let matrix = MatrixConfig {
        trials: cfg.trials,
        timeout: Duration::from_secs(cfg.timeout_s),
        max_execs: cfg.max_execs,
        jobs: cfg.jobs,
        base_seed: cfg.seed,
        results_path: cfg.path(RESULTS_FILE),
        work_dir: cfg.path("work"),
        crash_dir: cfg.path("crashes"),
        resume,
        cell_limit: None,
    };
    let outcome = run_matrix(&targets, &fuzzers, &matrix)?;
    if outcome.failures.is_empty() {
        Ok(outcome.executed)
    } else {
        let lines: Vec<_> = outcome
            .failures
            .iter()
            .map(|(k, e)| format!("{}/{}/t{}: {e}", k.program, k.fuzzer, k.trial))
            .collect();
        Err(PipelineError::Partial(format!("{} campaigns failed:\n{}", lines.len(), lines.join("\n"))))
    }
}

pub fn analysis_options(cfg: &PipelineConfig) -> AnalysisOptions {
    AnalysisOptions {
        aggregate: cfg.aggregate,
        significance: if cfg.permutation {
            Significance::Permutation { seed: cfg.seed }
        } else {
            Significance::TApprox
        },
    }
}

/// Writes `report.md` and `report.csv` from `results.csv` and the grid.
pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<usize, PipelineError> {
    let grid = cfg.generated_grid()?;
    let path = cfg.path(RESULTS_FILE);
    if !path.is_file() {
        return Err(PipelineError::Config(format!("{} missing; run `featbench run` first", path.display())));
    }
    let results = read_results(&path)?;
    let rows = analyze(&results, &grid, analysis_options(cfg))?;
    cfg.write_copy()?;
    for (name, format) in [(REPORT_MD, TableFormat::Markdown), (REPORT_CSV, TableFormat::Csv)] {
        let p = cfg.path(name);
        fs::write(&p, render_table(&rows, format)).map_err(io_err(&p))?;
    }
    Ok(rows.len())
}

#[derive(Debug, Parser)]
#[command(name = "featbench", about = "Feature-parameterised fuzzing benchmark", disable_version_flag = true)]
pub struct Cli {
    /// Print the version and the grid manifest hash.
    #[arg(long, short = 'V')]
    pub version: bool,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit sources and manifests for the grid.
    Generate {
        /// Grid manifest (JSON) to use instead of the built-in grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Compile the generated targets.
    Build,
    /// Check analytic probabilities, Monte-Carlo estimates and witnesses.
    Validate {
        #[arg(long)]
        mc_trials: Option<u64>,
        #[arg(long)]
        mc_seed: Option<u64>,
    },
    /// Run fuzzing campaigns.
    Run {
        #[arg(long)]
        timeout: Option<u64>,
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Comma-separated fuzzer names.
        #[arg(long, value_delimiter = ',')]
        fuzzers: Option<Vec<String>>,
        /// Comma-separated parameter labels whose sweeps to run.
        #[arg(long, value_delimiter = ',')]
        sweeps: Option<Vec<String>>,
        #[arg(long)]
        adapters: Option<PathBuf>,
        #[arg(long)]
        max_execs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep existing results and run only missing cells.
        #[arg(long)]
        resume: bool,
    },
    /// Correlate parameters with runtime and write the report.
    Analyze {
        #[arg(long, value_enum)]
        aggregate: Option<AggregateArg>,
        /// Permutation-test p-values.
        #[arg(long)]
        permutation: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregateArg {
    None,
    Median,
}

fn base_config(common: &CommonArgs) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

/// Applies subcommand flags on top of the file configuration.
pub fn configure(common: &CommonArgs, command: &Command) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = base_config(common)?;
    match command {
        Command::Generate { grid } => {
            if grid.is_some() {
                cfg.grid = grid.clone();
            }
        }
        Command::Build => {}
        Command::Validate { mc_trials, mc_seed } => {
            cfg.mc_trials = mc_trials.unwrap_or(cfg.mc_trials);
            cfg.mc_seed = mc_seed.unwrap_or(cfg.mc_seed);
        }
        Command::Run { timeout, trials, jobs, fuzzers, sweeps, adapters, max_execs, seed, resume: _ } => {
            cfg.timeout_s = timeout.unwrap_or(cfg.timeout_s);
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.jobs = jobs.unwrap_or(cfg.jobs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            if let Some(f) = fuzzers {
                cfg.fuzzers = f.clone();
            }
            if let Some(s) = sweeps {
                cfg.sweeps = s.clone();
            }
            if adapters.is_some() {
                cfg.adapters = adapters.clone();
            }
            if max_execs.is_some() {
                cfg.max_execs = *max_execs;
            }
        }
        Command::Analyze { aggregate, permutation } => {
            if let Some(a) = aggregate {
                cfg.aggregate = match a {
                    AggregateArg::None => Aggregate::None,
                    AggregateArg::Median => Aggregate::Median,
                };
            }
            cfg.permutation |= permutation;
        }
    }
    cfg.resolve()
}

fn execute(command: &Command, cfg: &PipelineConfig) -> Result<String, PipelineError> {
    Ok(match command {
        Command::Generate { .. } => format!("generated {} programs in {}", cmd_generate(cfg)?, cfg.out.display()),
        Command::Build => format!("built {} targets", cmd_build(cfg)?),
        Command::Validate { .. } => format!("validated {} programs", cmd_validate(cfg)?.len()),
        Command::Run { resume, .. } => format!("ran {} campaigns", cmd_run(cfg, *resume)?),
        Command::Analyze { .. } => format!("wrote {} report rows", cmd_analyze(cfg)?),
    })
}

/// Parses `args` (program name first) and runs the selected stage.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    if cli.version {
        println!("featbench {}", version_string());
        return 0;
    }
    let Some(command) = cli.command else {
        let _ = Cli::command().print_help();
        return 2;
    };
    let result = configure(&cli.common, &command).and_then(|cfg| execute(&command, &cfg));
    match result {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("featbench: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.timeout_s, cfg.trials), (300, 3));
        assert_eq!(cfg.fuzzers, ["random"]);
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("timeout = 3").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "out = \"o\"\ntrials = 3\ntimeout_s = 9\nfuzzers = [\"marker\"]\n").unwrap();
        let common = CommonArgs { config: Some(file), out: None };
        let run = Command::Run {
            timeout: Some(4),
            trials: None,
            jobs: Some(2),
            fuzzers: None,
            sweeps: Some(vec!["COMD".into()]),
            adapters: None,
            max_execs: None,
            seed: None,
            resume: false,
        };
        let cfg = configure(&common, &run).unwrap();
        assert_eq!(cfg.out, dir.path().join("o"));
        assert_eq!((cfg.trials, cfg.timeout_s, cfg.jobs), (3, 4, 2));
        assert_eq!(cfg.fuzzers, ["marker"]);
    }

    #[test]
    fn configuration_errors_exit_2() {
        let common = CommonArgs::default();
        let bad_grid = Command::Generate { grid: Some("/nonexistent/grid.json".into()) };
        assert_eq!(configure(&common, &bad_grid).unwrap_err().exit_code(), 2);
        let bad_sweep = Command::Run {
            timeout: None,
            trials: None,
            jobs: None,
            fuzzers: None,
            sweeps: Some(vec!["NOPE".into()]),
            adapters: None,
            max_execs: None,
            seed: None,
            resume: false,
        };
        assert_eq!(configure(&common, &bad_sweep).unwrap_err().exit_code(), 2);
        assert_eq!(PipelineError::Partial("x".into()).exit_code(), 1);
    }

    #[test]
    fn version_mentions_grid_hash() {
        let v = version_string();
        assert!(v.contains(&grid_hash()));
        assert_eq!(grid_hash().len(), 64);
    }

    #[test]
    fn validation_row_checks() {
        let row = |p: f64, est: Option<f64>, w: Option<bool>| ValidationRow {
            name: "x".into(),
            analytic_p: p,
            mc_estimate: est,
            witness_ok: w,
        };
        assert!(row(0.25, Some(0.2502), Some(true)).ok(100_000));
        assert!(!row(0.25, Some(0.30), Some(true)).ok(100_000));
        assert!(!row(0.25, None, Some(false)).ok(0));
        assert!(row(0.0, Some(0.0), None).ok(1000));
        assert!(row(1e-9, Some(1e-5), Some(true)).ok(100_000));
        assert!(!row(1e-9, Some(1e-4), Some(true)).ok(100_000));
        assert!(!row(0.0, Some(1e-5), None).ok(100_000));
    }
}
