//! Deterministic generator streams.
//!
//! Every random draw in the engine comes from a ChaCha stream whose seed is
//! derived from a root seed and a tuple of tags (episode index, step, node,
//! purpose). Replaying a run with the same root seed replays every stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes that separate otherwise identically keyed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Pool = 1,
    TrainTask = 2,
    TestTask = 3,
    Subgraph = 4,
    Dropout = 5,
    Mask = 6,
    Init = 7,
    Generator = 8,
    ValTask = 9,
    Audit = 10,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a list of tags into a stream seed.
pub fn derive_seed(root: u64, purpose: Purpose, tags: &[u64]) -> u64 {
    let mut h = splitmix(root ^ splitmix(purpose as u64));
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(root: u64, purpose: Purpose, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, purpose, tags))
}
