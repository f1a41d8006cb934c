//! Seed derivation for the independent random streams of a run.
//!
//! Every stream (environment lottery, per-agent action sampling, parameter
//! initialization, evaluation) gets its own seed derived from the run seed
//! and a domain tag, so that no two consumers ever share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep derived streams disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Environment = 0x454e_5600,
    Policy = 0x504f_4c00,
    PolicyInit = 0x5049_4e00,
    IntrinsicInit = 0x4949_4e00,
    EvalEnvironment = 0x4556_4500,
    EvalPolicy = 0x4556_5000,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of words into one 64-bit seed. Order-sensitive.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream_seed(run_seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut parts = Vec::with_capacity(indices.len() + 2);
    parts.push(run_seed);
    parts.push(stream as u64);
    parts.extend_from_slice(indices);
    derive_seed(&parts)
}

pub fn stream_rng(run_seed: u64, stream: Stream, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(run_seed, stream, indices))
}
