//! Named random substreams derived from a single top-level seed.
//!
//! Every consumer of randomness asks for `substream(seed, label, index)`; the
//! label separates subsystems and the index separates items inside one
//! subsystem (sample index, epoch, training step...). Streams are therefore
//! independent of the order in which they are requested, which is what makes
//! resuming and per-sample parallelism reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

// FNV-1a, stable across platforms and releases.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Deterministic RNG for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(label_hash(label)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, for handing a whole subsystem its own top-level seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(label_hash(label).rotate_left(17)))
}
