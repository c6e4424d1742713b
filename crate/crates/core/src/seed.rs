//! Named random substreams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SCENE: &str = "scene";
pub const TRAJECTORY: &str = "trajectory";
pub const NOISE: &str = "noise";
pub const FRAME_SAMPLING: &str = "frame-sampling";

/// 64-bit FNV-1a hash.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of the substream `name`.
pub fn substream(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a(name)
}

pub fn rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, name))
}

/// Generator for one indexed draw of a substream, independent of every other index.
pub fn indexed_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut r = rng(seed, name);
    r.set_stream(index);
    r
}
