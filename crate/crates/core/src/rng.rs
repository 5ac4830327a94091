//! Keyed random streams.
//!
//! Every random decision in the model is drawn from a ChaCha8 stream whose
//! 256-bit key is built from a domain tag and up to two 64-bit words (usually a
//! seed and a training step). The ChaCha stream id then selects the rollout
//! index, so rollout `m` of step `t` always sees the same numbers no matter
//! which worker thread samples it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the key spaces of the different consumers of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Graph = 0x6772_6170_6800_0001,
    Task = 0x7461_736b_0000_0002,
    ThetaInit = 0x7468_6574_6100_0003,
    Rollout = 0x726f_6c6c_6f75_0004,
}

/// Builds a stream keyed by `(domain, a, b)` positioned at stream id `stream`.
pub fn keyed_stream(domain: Domain, a: u64, b: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&(domain as u64).to_le_bytes());
    key[8..16].copy_from_slice(&a.to_le_bytes());
    key[16..24].copy_from_slice(&b.to_le_bytes());
    key[24..32].copy_from_slice(b"conet-v1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Stream for rollout `index` of training step `step` under `seed`.
pub fn rollout_stream(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    keyed_stream(Domain::Rollout, seed, step, index)
}
