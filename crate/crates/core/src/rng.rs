//! Reproducible, splittable random streams.
//!
//! Every consumer derives its own independent substream from a master seed
//! plus a tag path, e.g. `(point index, frame index, purpose)`. Channel,
//! symbol, and noise draws therefore never share a stream, and parallel
//! schedules cannot change the output.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream purpose tags used by the simulation harness.
pub const TAG_CHANNEL: u64 = 0x01;
pub const TAG_SYMBOLS: u64 = 0x02;
pub const TAG_NOISE: u64 = 0x03;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent substream from `seed` and an ordered tag path.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    ChaCha12Rng::seed_from_u64(s)
}
