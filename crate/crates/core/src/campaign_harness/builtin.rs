//! In-process baseline fuzzers driving a persistent-mode target.

use std::collections::HashSet;
use std::io;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapter::BuiltinKind;
use crate::target_exec::{ExecFeedback, PersistentTarget};

/// Stop conditions for a built-in run.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub max_execs: Option<u64>,
    pub deadline: Option<Instant>,
}

impl Budget {
    pub fn execs(n: u64) -> Self {
        Self { max_execs: Some(n), deadline: None }
    }
}

/// What a built-in run ended with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzOutcome {
    pub executions: u64,
    /// The first bug-triggering input, if any.
    pub crash: Option<Vec<u8>>,
}

pub trait InputStrategy {
    /// Whether trace markers are needed as feedback.
    fn wants_trace(&self) -> bool;
    fn next_input(&mut self) -> Vec<u8>;
    fn observe(&mut self, input: &[u8], feedback: &ExecFeedback);
}

pub struct RandomStrategy {
    rng: ChaCha8Rng,
    input_len: usize,
}

impl RandomStrategy {
    pub fn new(input_len: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), input_len }
    }
}

impl InputStrategy for RandomStrategy {
    fn wants_trace(&self) -> bool {
        false
    }

    fn next_input(&mut self) -> Vec<u8> {
        let mut buf = vec![0u8; self.input_len];
        self.rng.fill_bytes(&mut buf);
        buf
    }

    fn observe(&mut self, _: &[u8], _: &ExecFeedback) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    ByteFlip,
    ByteReplace,
    Splice,
    /// Add or subtract a small delta on a little-endian window of 1, 2 or 4 bytes.
    Arith(usize),
}

const MUTATIONS: [Mutation; 6] = [
    Mutation::ByteFlip,
    Mutation::ByteReplace,
    Mutation::Splice,
    Mutation::Arith(1),
    Mutation::Arith(2),
    Mutation::Arith(4),
];

const ARITH_MAX: u32 = 35;

/// Coverage-guided baseline: the feedback is the set of branch markers.
pub struct MarkerStrategy {
    rng: ChaCha8Rng,
    corpus: Vec<Vec<u8>>,
    seen: HashSet<u64>,
    pending_seed: bool,
}

impl MarkerStrategy {
    pub fn new(input_len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            corpus: vec![vec![0u8; input_len]],
            seen: HashSet::new(),
            pending_seed: true,
        }
    }

    pub fn corpus(&self) -> &[Vec<u8>] {
        &self.corpus
    }

    pub fn markers_seen(&self) -> usize {
        self.seen.len()
    }

    fn mutate(&mut self, input: &mut [u8], m: Mutation) {
        let len = input.len();
        match m {
            Mutation::ByteFlip => {
                let i = self.rng.random_range(0..len);
                input[i] ^= 0xFF;
            }
            Mutation::ByteReplace => {
                let i = self.rng.random_range(0..len);
                input[i] = self.rng.random();
            }
            Mutation::Splice => {
                let other = self.rng.random_range(0..self.corpus.len());
                let cut = self.rng.random_range(0..len);
                let donor = &self.corpus[other];
                input[cut..].copy_from_slice(&donor[cut..]);
            }
            Mutation::Arith(width) => {
                if width > len {
                    return self.mutate(input, Mutation::ByteReplace);
                }
                let at = self.rng.random_range(0..=len - width);
                let delta = self.rng.random_range(1..=ARITH_MAX);
                let mut word = [0u8; 4];
                word[..width].copy_from_slice(&input[at..at + width]);
                let v = u32::from_le_bytes(word);
                let v = if self.rng.random() { v.wrapping_add(delta) } else { v.wrapping_sub(delta) };
                input[at..at + width].copy_from_slice(&v.to_le_bytes()[..width]);
            }
        }
    }
}

impl InputStrategy for MarkerStrategy {
    fn wants_trace(&self) -> bool {
        true
    }

    fn next_input(&mut self) -> Vec<u8> {
        if self.pending_seed {
            self.pending_seed = false;
            return self.corpus[0].clone();
        }
        let parent = self.rng.random_range(0..self.corpus.len());
        let mut input = self.corpus[parent].clone();
        if input.is_empty() {
            return input;
        }
        let stack = self.rng.random_range(1..=4);
        for _ in 0..stack {
            let m = MUTATIONS[self.rng.random_range(0..MUTATIONS.len())];
            self.mutate(&mut input, m);
        }
        input
    }

    fn observe(&mut self, input: &[u8], feedback: &ExecFeedback) {
        let mut novel = false;
        for &m in &feedback.markers {
            novel |= self.seen.insert(m);
        }
        if novel {
            self.corpus.push(input.to_vec());
        }
    }
}

pub fn strategy(kind: BuiltinKind, input_len: usize, seed: u64) -> Box<dyn InputStrategy + Send> {
    match kind {
        BuiltinKind::Random => Box::new(RandomStrategy::new(input_len, seed)),
        BuiltinKind::Marker => Box::new(MarkerStrategy::new(input_len, seed)),
    }
}

/// Runs `strategy` against a persistent session until the bug fires or the
/// budget runs out.
pub fn drive(
    strategy: &mut dyn InputStrategy,
    target: &mut PersistentTarget,
    budget: Budget,
) -> io::Result<FuzzOutcome> {
    let mut executions = 0u64;
    loop {
        if budget.max_execs.is_some_and(|m| executions >= m) {
            return Ok(FuzzOutcome { executions, crash: None });
        }
        if executions.is_multiple_of(64) && budget.deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(FuzzOutcome { executions, crash: None });
        }
        let input = strategy.next_input();
        let feedback = target.exec(&input)?;
        executions += 1;
        if feedback.hit {
            return Ok(FuzzOutcome { executions, crash: Some(input) });
        }
        strategy.observe(&input, &feedback);
    }
}

/// Uniform random inputs of `input_len` bytes; reports the first bug hit.
pub fn builtin_random_fuzzer(target: &Path, input_len: usize, seed: u64, budget: Budget) -> io::Result<FuzzOutcome> {
    let mut strategy = RandomStrategy::new(input_len, seed);
    let mut session = PersistentTarget::spawn(target, input_len, false)?;
    drive(&mut strategy, &mut session, budget)
}

/// Marker-feedback mutational fuzzing; reports the first bug hit.
pub fn builtin_marker_fuzzer(target: &Path, input_len: usize, seed: u64, budget: Budget) -> io::Result<FuzzOutcome> {
    let mut strategy = MarkerStrategy::new(input_len, seed);
    let mut session = PersistentTarget::spawn(target, input_len, true)?;
    drive(&mut strategy, &mut session, budget)
}
