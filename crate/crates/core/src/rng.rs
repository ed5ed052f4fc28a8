//! Seeded, splittable random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a master
//! seed plus a small tuple of indices, so results never depend on the order
//! in which workers are processed or on the thread pool size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags that separate otherwise identical index tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Rollout = 1,
    Split = 2,
    Minibatch = 3,
    ClusterInit = 4,
    WarmInit = 5,
    Generic = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, a, b)`.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let key = splitmix(seed ^ splitmix(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(splitmix(splitmix(a) ^ b.rotate_left(29)));
    rng
}
