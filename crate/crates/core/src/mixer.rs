//! Bit-exact Rust mirror of the hashing used inside generated targets.
//!
//! Per-level selector for branch trees:
//!
//! ```text
//! z  = hash + level * 0x9E3779B97F4A7C15          (mod 2^64)
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (mod 2^64)
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB       (mod 2^64)
//! h  = z ^ (z >> 31)
//! ```
//!
//! `hash` is the first four input bytes read as a little-endian `u32`.
//! Magic strings come from a SplitMix64 stream seeded with the FNV-1a 64-bit
//! hash of the program name; each output word contributes its eight bytes
//! low-to-high, skipping `0x00` and `0x0A`.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit avalanche finalizer.
pub fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// Selector source for nesting `level` (1-based).
pub fn level_hash(hash: u32, level: u32) -> u64 {
    avalanche(u64::from(hash).wrapping_add(u64::from(level).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Reads the branch-tree hash from the first four bytes, zero-padded.
pub fn input_hash(input: &[u8]) -> u32 {
    let mut word = [0u8; 4];
    let n = input.len().min(4);
    word[..n].copy_from_slice(&input[..n]);
    u32::from_le_bytes(word)
}

/// Byte stream used to derive magic constants for a program.
#[derive(Debug, Clone)]
pub struct MagicStream {
    state: u64,
    word: [u8; 8],
    pos: usize,
}

impl MagicStream {
    pub fn for_program(name: &str) -> Self {
        Self { state: fnv1a64(name.as_bytes()), word: [0; 8], pos: 8 }
    }

    fn next_raw(&mut self) -> u8 {
        if self.pos == 8 {
            self.state = self.state.wrapping_add(GOLDEN_GAMMA);
            self.word = avalanche(self.state).to_le_bytes();
            self.pos = 0;
        }
        let b = self.word[self.pos];
        self.pos += 1;
        b
    }

    pub fn take(&mut self, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let b = self.next_raw();
            if b != 0x00 && b != 0x0A {
                out.push(b);
            }
        }
        out
    }
}
