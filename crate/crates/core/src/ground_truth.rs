//! Trigger probabilities and witness inputs for every program.
//!
//! Closed forms are exact rationals. Monte-Carlo estimates run the compiled
//! target in `--count` mode and never stand in for a closed form.

use std::path::Path;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::feature_model::{
    BranchTreeParams, LoopParams, Params, ProgramSpec, CHECKSUM_BLOCK, CHECKSUM_DATA,
    NESTED_HEADER, NESTED_MAGIC_WIDTH,
};
use crate::mixer::{avalanche, input_hash, level_hash, GOLDEN_GAMMA};
use crate::program_generator::{magic_bytes, nested_checksum_offset, nested_magic, LOOP_SENTINEL};
use crate::target_exec::count_hits;
use crate::Probability;

/// Seed of the branch-tree witness search.
pub const WITNESS_SEED: u64 = 0x5EED_0FB4_A7C4;

/// Monte-Carlo trials are split into chunks of this size, each with its own
/// derived seed, so the estimate does not depend on the worker count.
pub const MC_CHUNK: u64 = 1 << 16;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("target binary {0} not found")]
    TargetMissing(String),
    #[error("executing target: {0}")]
    ExecFailure(String),
    #[error("no witness exists for {0}")]
    NoWitness(String),
    #[error("monte-carlo needs at least one trial")]
    NoTrials,
}

/// Exact bug-trigger probability under uniformly random inputs of length
/// `input_len`.
pub fn analytic_probability(spec: &ProgramSpec) -> Option<Probability> {
    let inv_pow = |base: u64, exp: u64| -> BigRational {
        let den = num_traits::pow(BigInt::from(base), exp as usize);
        BigRational::new(BigInt::one(), den)
    };
    let p = match spec.params() {
        Params::BranchTree(p) => inv_pow(p.weight.into(), p.depth.into()),
        Params::Magic(p) => inv_pow(256, p.length.into()),
        Params::Checksum(p) => inv_pow(65536, p.count.into()),
        Params::Nested(p) => {
            inv_pow(256, 2 * u64::from(p.magic_levels())) * inv_pow(65536, p.count.into())
        }
        Params::Loop(p) => loop_probability(p, spec.input_len()),
    };
    Some(p)
}

fn loop_probability(p: &LoopParams, input_len: usize) -> BigRational {
    let k = p.iteration as usize;
    if input_len < k {
        return BigRational::zero();
    }
    if !p.has_data_constraint {
        return BigRational::one();
    }
    // P[Bin(n, 1/256) >= k] = 1 - sum_{i<k} C(n,i) 255^(n-i) / 256^n
    let n = input_len;
    let mut below = BigUint::zero();
    let mut binom = BigUint::one();
    for i in 0..k {
        if i > 0 {
            binom = binom * BigUint::from(n - i + 1) / BigUint::from(i);
        }
        below += &binom * num_traits::pow(BigUint::from(255u32), n - i);
    }
    let total = num_traits::pow(BigUint::from(256u32), n);
    BigRational::one() - BigRational::new(BigInt::from(below), BigInt::from(total))
}

pub fn probability_f64(p: &Probability) -> f64 {
    p.to_f64().unwrap_or(0.0)
}

/// Leaf (1-based) reached by `hash`, mirroring the generated selector chain.
pub fn route_leaf(p: &BranchTreeParams, hash: u32) -> u64 {
    let selectors: Vec<u64> = (1..=p.depth)
        .map(|level| level_hash(hash, level) % p.selector_modulus())
        .collect();
    route_selectors(p, &selectors)
}

/// Leaf reached when level `k` draws selector `selectors[k-1]`.
pub fn route_selectors(p: &BranchTreeParams, selectors: &[u64]) -> u64 {
    let w = u64::from(p.width);
    let mut index = 0u64;
    for (i, &u) in selectors.iter().enumerate() {
        let level = i as u32 + 1;
        let favoured = u64::from(p.bug_path_child(level));
        let child = if u < w - 1 {
            favoured
        } else {
            // off-path children in ascending order, skipping the favoured one
            let s = (u - (w - 1)) % (w - 1);
            if s >= favoured {
                s + 1
            } else {
                s
            }
        };
        index = index * w + child;
    }
    index + 1
}

/// A concrete input of length `input_len` that triggers the bug.
pub fn witness_input(spec: &ProgramSpec) -> Result<Vec<u8>, OracleError> {
    let mut input = vec![0u8; spec.input_len()];
    match spec.params() {
        Params::BranchTree(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(WITNESS_SEED);
            let expected = u64::from(p.weight).saturating_pow(p.depth);
            let budget = expected.saturating_mul(64).max(1 << 20);
            let hash = (0..budget)
                .map(|_| rng.next_u32())
                .find(|&h| route_leaf(p, h) == p.bug_branch)
                .ok_or_else(|| OracleError::NoWitness(spec.name()))?;
            input[..4].copy_from_slice(&hash.to_le_bytes());
        }
        Params::Loop(p) => {
            let k = p.iteration as usize;
            if spec.input_len() < k {
                return Err(OracleError::NoWitness(spec.name()));
            }
            if p.has_data_constraint {
                input[..k].fill(LOOP_SENTINEL);
            }
        }
        Params::Magic(p) => {
            let start = p.start as usize;
            input[start..start + p.length as usize].copy_from_slice(&magic_bytes(spec));
        }
        Params::Checksum(p) => {
            for j in 0..p.count as usize {
                fill_checksum_block(&mut input, CHECKSUM_BLOCK * j, j);
            }
        }
        Params::Nested(p) => {
            for (k, m) in nested_magic(spec).iter().enumerate() {
                let at = NESTED_HEADER + NESTED_MAGIC_WIDTH * k;
                input[at..at + 2].copy_from_slice(m);
            }
            for j in 0..p.count as usize {
                fill_checksum_block(&mut input, nested_checksum_offset(p, j), j);
            }
        }
    }
    Ok(input)
}

/// Writes a non-trivial data region at `offset` and patches its expected sum.
fn fill_checksum_block(input: &mut [u8], offset: usize, j: usize) {
    for i in 0..CHECKSUM_DATA {
        input[offset + i] = (0x31 + 7 * i + 13 * j) as u8;
    }
    let sum = add16(&input[offset..offset + CHECKSUM_DATA]);
    input[offset + CHECKSUM_DATA..offset + CHECKSUM_BLOCK].copy_from_slice(&sum.to_le_bytes());
}

/// 16-bit wrapping byte sum.
pub fn add16(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0u16, |s, &b| s.wrapping_add(u16::from(b)))
}

/// Hit count over uniform random inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McEstimate {
    pub hits: u64,
    pub trials: u64,
}

impl McEstimate {
    pub fn estimate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// Binomial standard error of the estimate.
    pub fn std_error(&self) -> f64 {
        let p = self.estimate();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

fn chunk_seed(seed: u64, chunk: u64) -> u64 {
    avalanche(seed ^ chunk.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// Uniform random records of `input_len` bytes for chunk `chunk` of a run.
pub fn random_records(input_len: usize, count: u64, seed: u64, chunk: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, chunk));
    let mut buf = vec![0u8; input_len * count as usize];
    rng.fill_bytes(&mut buf);
    buf
}

/// Runs the compiled target on `trials` uniform random inputs.
pub fn monte_carlo_probability(
    target: &Path,
    spec: &ProgramSpec,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, OracleError> {
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    if !target.is_file() {
        return Err(OracleError::TargetMissing(target.display().to_string()));
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            let records = random_records(spec.input_len(), n, seed, c);
            let (hits, runs) =
                count_hits(target, records).map_err(|e| OracleError::ExecFailure(e.to_string()))?;
            if runs != n {
                return Err(OracleError::ExecFailure(format!("target consumed {runs} of {n} records")));
            }
            Ok(hits)
        })
        .collect::<Result<Vec<u64>, _>>()?
        .into_iter()
        .sum();
    Ok(McEstimate { hits, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbabilityKind {
    Exact(Probability),
    Estimate(McEstimate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerProfile {
    pub spec: ProgramSpec,
    pub probability: ProbabilityKind,
    pub witness: Option<Vec<u8>>,
}

/// Exact probability when a closed form exists, otherwise an estimate from
/// `target`; witness is `None` only for probability-zero programs.
pub fn trigger_profile(
    spec: &ProgramSpec,
    target: Option<&Path>,
    mc_trials: u64,
    seed: u64,
) -> Result<TriggerProfile, OracleError> {
    let probability = match analytic_probability(spec) {
        Some(p) => ProbabilityKind::Exact(p),
        None => {
            let target = target.ok_or_else(|| OracleError::TargetMissing(spec.name()))?;
            ProbabilityKind::Estimate(monte_carlo_probability(target, spec, mc_trials, seed)?)
        }
    };
    let witness = match witness_input(spec) {
        Ok(w) => Some(w),
        Err(OracleError::NoWitness(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TriggerProfile { spec: *spec, probability, witness })
}

/// Random u32 hash reaching leaf `leaf`, for tests and seeding.
pub fn find_hash_for_leaf<R: Rng>(p: &BranchTreeParams, leaf: u64, rng: &mut R, budget: u64) -> Option<u32> {
    (0..budget).map(|_| rng.random::<u32>()).find(|&h| route_leaf(p, h) == leaf)
}

/// Whether `input` reaches the bug according to the Rust model of the target.
pub fn model_triggers(spec: &ProgramSpec, input: &[u8]) -> bool {
    let byte = |i: usize| input.get(i).copied().unwrap_or(0);
    match spec.params() {
        Params::BranchTree(p) => route_leaf(p, input_hash(input)) == p.bug_branch,
        Params::Loop(p) => {
            let n = input.len().min(spec.input_len());
            let counted = if p.has_data_constraint {
                input[..n].iter().filter(|&&b| b == LOOP_SENTINEL).count()
            } else {
                n
            };
            counted >= p.iteration as usize
        }
        Params::Magic(p) => {
            let start = p.start as usize;
            magic_bytes(spec).iter().enumerate().all(|(i, &m)| byte(start + i) == m)
        }
        Params::Checksum(p) => (0..p.count as usize).all(|j| block_ok(&byte, CHECKSUM_BLOCK * j)),
        Params::Nested(p) => {
            let magic_ok = nested_magic(spec).iter().enumerate().all(|(k, m)| {
                let at = NESTED_HEADER + NESTED_MAGIC_WIDTH * k;
                byte(at) == m[0] && byte(at + 1) == m[1]
            });
            magic_ok && (0..p.count as usize).all(|j| block_ok(&byte, nested_checksum_offset(p, j)))
        }
    }
}

fn block_ok(byte: &dyn Fn(usize) -> u8, offset: usize) -> bool {
    let sum = (0..CHECKSUM_DATA).fold(0u16, |s, i| s.wrapping_add(u16::from(byte(offset + i))));
    let expected = u16::from_le_bytes([byte(offset + CHECKSUM_DATA), byte(offset + CHECKSUM_DATA + 1)]);
    sum == expected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_model::{default_grid, LoopKind, Parameter};
    use num_traits::Signed;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn analytic_examples() {
        let tree = ProgramSpec::branch_tree(2, 2, 2, 1).unwrap();
        assert_eq!(analytic_probability(&tree).unwrap(), ratio(1, 4));
        let magic = ProgramSpec::magic(4, 1).unwrap();
        assert_eq!(analytic_probability(&magic).unwrap(), ratio(1, 256));
        let short = ProgramSpec::looped(LoopKind::Loop, 5, false).unwrap().resized(4).unwrap();
        assert!(analytic_probability(&short).unwrap().is_zero());
        let chk = ProgramSpec::checksum(2).unwrap();
        assert_eq!(analytic_probability(&chk).unwrap(), ratio(1, 1 << 32));
        let nest = ProgramSpec::nested(3, 1).unwrap();
        assert_eq!(analytic_probability(&nest).unwrap(), ratio(1, 1 << 48));
    }

    #[test]
    fn enumerated_selector_space_gives_exact_weight_law() {
        // Every selector tuple in [0, M)^d is equally likely under a uniform
        // per-level draw; count the ones routed to the bug leaf.
        for (w, d, o, b) in [(2, 2, 2, 1), (2, 2, 4, 1), (3, 2, 2, 5), (3, 3, 3, 27), (4, 2, 5, 7)] {
            let p = BranchTreeParams::new(w, d, o, b);
            let m = p.selector_modulus();
            let total = m.pow(d);
            let mut hits = 0u64;
            for code in 0..total {
                let sel: Vec<u64> = (0..d).map(|k| (code / m.pow(d - 1 - k)) % m).collect();
                if route_selectors(&p, &sel) == b {
                    hits += 1;
                }
            }
            assert_eq!(hits * u64::from(o).pow(d), total, "w={w} d={d} o={o} b={b}");
        }
    }

    #[test]
    fn every_leaf_reachable() {
        let p = BranchTreeParams::new(3, 2, 4, 1);
        let mut seen = std::collections::BTreeSet::new();
        for h in 0..20_000u32 {
            seen.insert(route_leaf(&p, h));
        }
        assert_eq!(seen, (1..=9).collect());
    }

    #[test]
    fn loop_binomial_tail_matches_direct_sum() {
        // Independent route: P[X >= k] summed over the upper tail with f64.
        let n = 64usize;
        for k in 1..=6u32 {
            let spec = ProgramSpec::looped(LoopKind::Loop, k, true).unwrap();
            assert_eq!(spec.input_len(), n);
            let exact = probability_f64(&analytic_probability(&spec).unwrap());
            let mut tail = 0.0f64;
            for i in k as usize..=n {
                let mut c = 1.0f64;
                for t in 0..i {
                    c = c * (n - t) as f64 / (t + 1) as f64;
                }
                tail += c * (1.0f64 / 256.0).powi(i as i32) * (255.0f64 / 256.0).powi((n - i) as i32);
            }
            assert!((exact - tail).abs() <= 1e-12 * tail.max(1e-300), "k={k}: {exact} vs {tail}");
        }
    }

    #[test]
    fn witnesses_satisfy_the_model() {
        for spec in default_grid() {
            let w = witness_input(&spec).unwrap();
            assert_eq!(w.len(), spec.input_len());
            assert!(model_triggers(&spec, &w), "{spec}");
        }
    }

    #[test]
    fn witness_examples() {
        let spec = ProgramSpec::magic(0, 4).unwrap();
        let w = witness_input(&spec).unwrap();
        assert_eq!(&w[..4], magic_bytes(&spec).as_slice());
        assert!(w[4..].iter().all(|&b| b == 0));

        let spec = ProgramSpec::checksum(1).unwrap();
        let w = witness_input(&spec).unwrap();
        assert_eq!(u16::from_le_bytes([w[16], w[17]]), add16(&w[..16]));

        let short = ProgramSpec::looped(LoopKind::Loop, 5, false).unwrap().resized(4).unwrap();
        assert!(matches!(witness_input(&short), Err(OracleError::NoWitness(_))));
    }

    #[test]
    fn checksum_witness_breaks_under_mutation() {
        let spec = ProgramSpec::checksum(2).unwrap();
        let mut w = witness_input(&spec).unwrap();
        w[CHECKSUM_BLOCK + 3] ^= 0xFF;
        assert!(!model_triggers(&spec, &w));
    }

    #[test]
    fn analytic_is_monotone_over_grid() {
        let grid = default_grid();
        let check = |param: Parameter| {
            let mut sweep: Vec<_> = param.sweep(&grid);
            sweep.sort_by(|a, b| param.value_of(a).partial_cmp(&param.value_of(b)).unwrap());
            for pair in sweep.windows(2) {
                let a = analytic_probability(pair[0]).unwrap();
                let b = analytic_probability(pair[1]).unwrap();
                assert!(b <= a, "{param}: {} -> {}", pair[0], pair[1]);
            }
        };
        for param in [Parameter::Depth, Parameter::Length, Parameter::Count, Parameter::Iteration, Parameter::NestDepth] {
            check(param);
        }
        // data-constrained iteration sweep as well
        for k in 1..6 {
            let a = analytic_probability(&ProgramSpec::looped(LoopKind::Loop, k, true).unwrap()).unwrap();
            let b = analytic_probability(&ProgramSpec::looped(LoopKind::Loop, k + 1, true).unwrap()).unwrap();
            assert!(b < a && b.is_positive());
        }
    }

    #[test]
    fn monte_carlo_rejects_zero_trials_and_missing_target() {
        let spec = ProgramSpec::magic(0, 1).unwrap();
        assert!(matches!(
            monte_carlo_probability(Path::new("/nonexistent"), &spec, 0, 1),
            Err(OracleError::NoTrials)
        ));
        assert!(matches!(
            monte_carlo_probability(Path::new("/nonexistent/target"), &spec, 10, 1),
            Err(OracleError::TargetMissing(_))
        ));
    }

    #[test]
    fn random_records_are_seeded() {
        assert_eq!(random_records(4, 100, 7, 0), random_records(4, 100, 7, 0));
        assert_ne!(random_records(4, 100, 7, 0), random_records(4, 100, 7, 1));
    }
}
