//! Seeded random streams.
//!
//! Every random decision derives from one 64-bit seed split into named
//! ChaCha streams, so components never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used by the toolkit.
pub const EDM_STREAM: &str = "edm";
pub const SYNTH_STREAM: &str = "synth";
pub const CUTS_STREAM: &str = "synth.cuts";
pub const DAR_STREAM: &str = "dar";

/// Generator for the named sub-stream of `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
