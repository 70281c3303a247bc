//! Deterministic random-stream derivation.
//!
//! Every sampling site in the library takes an explicit generator; there is
//! no global randomness. Substreams are derived from a root seed plus a list
//! of integer tags (sequence index, interval index, purpose), so a draw made
//! for one sequence/interval never depends on how many draws other sequences
//! consumed. This is what makes evaluation results independent of batch
//! composition and thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags keep logically distinct streams apart even when the other
/// tags coincide.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const TRAIN_NOISE: u64 = 3;
    pub const LATENT_CONDITION: u64 = 4;
    pub const LATENT_PREDICT: u64 = 5;
    pub const SIMULATE: u64 = 6;
    pub const DELETE: u64 = 7;
    pub const MISC: u64 = 8;
    pub const FINETUNE_SELECT: u64 = 9;
    pub const VALIDATION: u64 = 10;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a generator from a root seed and a tag path.
pub fn substream(root: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = splitmix64(root ^ 0xa076_1d64_78bd_642f);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    let mut seed = [0u8; 32];
    let mut s = state;
    for chunk in seed.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
