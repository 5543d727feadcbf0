//! Completion rates, tie-corrected Spearman correlation and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::campaign_harness::CampaignResult;
use crate::feature_model::{Parameter, ProgramSpec};

/// Significance threshold for the asterisk.
pub const ALPHA: f64 = 0.05;

/// Fewer completed points than this and the correlation is unavailable.
pub const MIN_POINTS: usize = 5;

/// Largest sample for which the permutation test enumerates every ordering.
pub const EXACT_PERMUTATION_MAX_N: usize = 8;

/// Resamples drawn by the permutation test above the exact limit.
pub const PERMUTATION_RESAMPLES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 points, got {0}")]
    TooFew(usize),
    #[error("all values equal on one side; correlation undefined")]
    DegenerateInput,
    #[error("no results")]
    EmptyInput,
    #[error("parameter {0} has no sweep in the grid")]
    UnknownSweep(String),
}

/// Rank correlation and its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation<T> {
    pub rho: T,
    pub p_value: T,
}

/// 1-based ranks, ties replaced by the mean of the ranks they span.
pub fn average_ranks<T: Float>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let two = T::one() + T::one();
        let r = (T::from(i + j).unwrap() + two) / two;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson<T: Float>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::from(a.len()).unwrap();
    let ma = a.iter().fold(T::zero(), |s, &v| s + v) / n;
    let mb = b.iter().fold(T::zero(), |s, &v| s + v) / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return None;
    }
    let r = sab / (saa * sbb).sqrt();
    // perfect (anti)correlation can land a few ulps short of 1
    if T::one() - r.abs() <= T::epsilon() * T::from(16).unwrap() {
        return Some(T::one().copysign(r));
    }
    Some(r.max(-T::one()).min(T::one()))
}

fn check_lengths<T>(xs: &[T], ys: &[T]) -> Result<(), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew(xs.len()));
    }
    Ok(())
}

/// Spearman's rho without a significance test.
pub fn spearman_rho<T: Float>(xs: &[T], ys: &[T]) -> Result<T, StatsError> {
    check_lengths(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or(StatsError::DegenerateInput)
}

/// Two-tailed p-value of `rho` over `n` points from the t approximation
/// with n - 2 degrees of freedom.
pub fn t_test_p_value<T: Float>(rho: T, n: usize) -> T {
    let r = rho.abs().to_f64().unwrap_or(f64::NAN);
    if r >= 1.0 {
        return T::zero();
    }
    if n <= 2 {
        return T::one();
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    T::from((2.0 * dist.sf(t)).clamp(0.0, 1.0)).unwrap()
}

/// Spearman's rho with the t-approximation p-value.
pub fn spearman<T: Float>(xs: &[T], ys: &[T]) -> Result<Correlation<T>, StatsError> {
    let rho = spearman_rho(xs, ys)?;
    Ok(Correlation { rho, p_value: t_test_p_value(rho, xs.len()) })
}

/// Spearman's rho with a permutation-test p-value: every ordering of `ys`
/// up to [`EXACT_PERMUTATION_MAX_N`] points, seeded resampling beyond.
pub fn spearman_permutation<T: Float>(xs: &[T], ys: &[T], seed: u64) -> Result<Correlation<T>, StatsError> {
    let rho = spearman_rho(xs, ys)?;
    let rx = average_ranks(xs);
    let mut ry = average_ranks(ys);
    let observed = rho.abs();
    let tol = T::from(1e-12).unwrap();
    let extreme = |ry: &[T]| pearson(&rx, ry).is_some_and(|r| r.abs() >= observed - tol);
    let p = if xs.len() <= EXACT_PERMUTATION_MAX_N {
        let (mut hits, mut total) = (0u64, 0u64);
        heap_permutations(&mut ry, &mut |perm| {
            total += 1;
            hits += u64::from(extreme(perm));
        });
        hits as f64 / total as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0u64;
        for _ in 0..PERMUTATION_RESAMPLES {
            ry.shuffle(&mut rng);
            hits += u64::from(extreme(&ry));
        }
        (hits + 1) as f64 / (PERMUTATION_RESAMPLES + 1) as f64
    };
    Ok(Correlation { rho, p_value: T::from(p).unwrap() })
}

fn heap_permutations<T: Copy>(v: &mut [T], visit: &mut impl FnMut(&[T])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Fraction of campaigns that triggered the bug within the timeout.
pub fn completion_rate(results: &[CampaignResult]) -> Result<f64, StatsError> {
    if results.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let done = results.iter().filter(|r| r.completed).count();
    Ok(done as f64 / results.len() as f64)
}

/// How trials of one program are combined before correlating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Every completed trial is a point.
    #[default]
    None,
    /// One point per program: the median runtime of its completed trials.
    Median,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Significance {
    #[default]
    TApprox,
    Permutation { seed: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub aggregate: Aggregate,
    pub significance: Significance,
}

/// One (fuzzer, parameter) cell of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub fuzzer: String,
    pub parameter: Parameter,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub completion: f64,
    pub n_points: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Correlates `parameter` with runtime for `fuzzer` over the parameter's
/// sweep in `grid`. Timed-out runs count toward completion only.
pub fn correlate_parameter(
    results: &[CampaignResult],
    grid: &[ProgramSpec],
    fuzzer: &str,
    parameter: Parameter,
    opts: AnalysisOptions,
) -> Result<StatRow, StatsError> {
    let sweep: BTreeMap<String, f64> = parameter
        .sweep(grid)
        .into_iter()
        .filter_map(|s| parameter.value_of(s).map(|v| (s.name(), v)))
        .collect();
    if sweep.is_empty() {
        return Err(StatsError::UnknownSweep(parameter.label().to_string()));
    }
    let runs: Vec<&CampaignResult> = results
        .iter()
        .filter(|r| r.fuzzer == fuzzer && sweep.contains_key(&r.program))
        .collect();
    if runs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let completion = runs.iter().filter(|r| r.completed).count() as f64 / runs.len() as f64;

    let mut points: Vec<(f64, f64)> = match opts.aggregate {
        Aggregate::None => runs.iter().filter(|r| r.completed).map(|r| (sweep[&r.program], r.runtime_s)).collect(),
        Aggregate::Median => {
            let mut by_program: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in runs.iter().filter(|r| r.completed) {
                by_program.entry(&r.program).or_default().push(r.runtime_s);
            }
            by_program.into_iter().map(|(p, mut v)| (sweep[p], median(&mut v))).collect()
        }
    };
    // canonical order so the result does not depend on input order
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let distinct: BTreeSet<u64> = points.iter().map(|p| p.0.to_bits()).collect();

    let mut row = StatRow {
        fuzzer: fuzzer.to_string(),
        parameter,
        rho: None,
        p_value: None,
        significant: false,
        completion,
        n_points: points.len(),
    };
    if points.len() < MIN_POINTS || distinct.len() < 2 {
        return Ok(row);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let corr = match opts.significance {
        Significance::TApprox => spearman(&xs, &ys),
        Significance::Permutation { seed } => spearman_permutation(&xs, &ys, seed),
    };
    match corr {
        Ok(c) => {
            row.rho = Some(c.rho);
            row.p_value = Some(c.p_value);
            row.significant = c.p_value < ALPHA;
        }
        // constant runtimes: nothing to rank
        Err(StatsError::DegenerateInput) => {}
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Every (fuzzer, parameter) cell with at least one run, fuzzers sorted by
/// name and parameters in label order.
pub fn analyze(results: &[CampaignResult], grid: &[ProgramSpec], opts: AnalysisOptions) -> Result<Vec<StatRow>, StatsError> {
    if results.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let fuzzers: BTreeSet<&str> = results.iter().map(|r| r.fuzzer.as_str()).collect();
    let mut rows = Vec::new();
    for fuzzer in fuzzers {
        for parameter in Parameter::ALL {
            match correlate_parameter(results, grid, fuzzer, parameter, opts) {
                Ok(row) => rows.push(row),
                Err(StatsError::EmptyInput | StatsError::UnknownSweep(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// The "corr" cell: rho to 3 decimals, `*` when significant, `-` when unavailable.
pub fn corr_cell(row: &StatRow) -> String {
    match row.rho {
        Some(rho) => format!("{rho:.3}{}", if row.significant { "*" } else { "" }),
        None => "-".to_string(),
    }
}

/// The "comp" cell: completion rate to 2 decimals.
pub fn comp_cell(row: &StatRow) -> String {
    format!("{:.2}", row.completion)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Renders rows as a fuzzer x parameter table (Markdown) or one line per
/// row (CSV). Missing cells are left blank.
pub fn render_table(rows: &[StatRow], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let params: Vec<Parameter> = if rows.is_empty() {
                Parameter::ALL.to_vec()
            } else {
                Parameter::ALL.into_iter().filter(|p| rows.iter().any(|r| r.parameter == *p)).collect()
            };
            out.push_str("| Fuzzer |");
            for p in &params {
                let _ = write!(out, " {0} corr | {0} comp |", p.label());
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|---:|".repeat(params.len()));
            out.push('\n');
            let fuzzers: BTreeSet<&str> = rows.iter().map(|r| r.fuzzer.as_str()).collect();
            for f in fuzzers {
                let _ = write!(out, "| {f} |");
                for p in &params {
                    match rows.iter().find(|r| r.fuzzer == f && r.parameter == *p) {
                        Some(r) => {
                            let _ = write!(out, " {} | {} |", corr_cell(r), comp_cell(r));
                        }
                        None => out.push_str("  |  |"),
                    }
                }
                out.push('\n');
            }
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let _ = w.write_record(["fuzzer", "parameter", "corr", "comp", "rho", "p_value", "significant", "n_points"]);
            for r in rows {
                let _ = w.write_record([
                    r.fuzzer.clone(),
                    r.parameter.label().to_string(),
                    corr_cell(r),
                    comp_cell(r),
                    fmt_opt(r.rho),
                    fmt_opt(r.p_value),
                    r.significant.to_string(),
                    r.n_points.to_string(),
                ]);
            }
            out = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
        }
    }
    out
}
