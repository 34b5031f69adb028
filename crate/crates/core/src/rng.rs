//! Seeded, splittable random-number streams.
//!
//! All sampling in this crate is driven by ChaCha12 generators keyed by
//! an explicit `u64` seed. Independent substreams are obtained either
//! through the generator's stream id (cheap, same key) or by deriving a
//! fresh seed with [`derive_seed`] (used when handing seeds across an
//! API boundary, e.g. one seed per repetition or per grid point).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for `seed` on the default stream.
pub fn seeded(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Generator for `seed` on substream `stream`.
///
/// Streams of the same seed never overlap, so concurrent consumers can
/// draw from disjoint streams without coordination.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable child seed for `(seed, index)` via splitmix64.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
