//! Deterministic stream splitting for the sampler and the benchmark harness.
//!
//! Every parallelizable unit of work (a latent row, a feature column, a
//! replicate) draws from its own ChaCha substream keyed by the master seed
//! and the unit's coordinates. Draws therefore do not depend on scheduling,
//! and results are bit-identical for any worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain separation tags; keep substreams of different update kinds disjoint
/// even when their index tuples collide.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 1,
    Selection = 2,
    Loadings = 3,
    FeatureVar = 4,
    Latent = 5,
    Outcome = 6,
    Replicate = 7,
    Simulate = 8,
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix the coordinates into a 256-bit ChaCha key.
pub fn substream(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = master;
    let mut words = [0u64; 4];
    for (w, v) in words.iter_mut().zip([stream as u64, a, b, u64::MAX]) {
        s ^= v.wrapping_mul(0xff51_afd7_ed55_8ccd);
        *w = splitmix(&mut s);
    }
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Derive the seed for one replicate of a multi-replicate run.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    let mut s = master ^ (Stream::Replicate as u64).wrapping_mul(GAMMA);
    let _ = splitmix(&mut s);
    s = s.wrapping_add((replicate as u64).wrapping_mul(0xff51_afd7_ed55_8ccd));
    splitmix(&mut s)
}
