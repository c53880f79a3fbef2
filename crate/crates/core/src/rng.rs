//! Seeded random streams.
//!
//! Every random draw in this crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! a counter-based stream cipher generator whose output is fully specified and
//! platform independent. A `u64` seed is expanded to the 256-bit ChaCha key with
//! `SeedableRng::seed_from_u64` (PCG32 expansion, as documented by `rand_core`).
//!
//! Work that is parallelised over pixels draws from a per-pixel stream: the same
//! key with the ChaCha stream id set to the pixel's flat index. Output therefore
//! does not depend on how pixels are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for a top-level seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed so that distinct purposes (filter init, head init,
/// shuffling) never share a stream.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
