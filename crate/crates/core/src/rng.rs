//! Named random sub-streams derived from a single master seed.
//!
//! Every stochastic component (world generation, field synthesis, start
//! placement, planner) draws from its own ChaCha stream keyed by
//! `(master, name, index)`, so one component can be re-run in isolation
//! without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const WORLD: &str = "world";
pub const FIELD: &str = "field";
pub const START: &str = "start";
pub const PLANNER: &str = "planner";
pub const CROP: &str = "crop";

/// Derive a 64-bit seed for a named sub-stream.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    let digest = digest(master, name, index);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Rng for a named sub-stream.
pub fn substream(master: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::from_seed(digest(master, name, index))
}

/// Rng seeded directly from an integer seed.
pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

fn digest(master: u64, name: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}
