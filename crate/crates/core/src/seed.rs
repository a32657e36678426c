//! Deterministic per-purpose RNG streams derived from a run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers; each consumer of randomness gets its own.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Sizes = 1,
    Morphology = 2,
    Synapses = 3,
    Targets = 4,
    InitialVoltage = 5,
    /// Oracle test systems; never used by a simulation.
    Validation = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for `(seed, stream, index)`; `index` is usually a neuron gid.
pub fn rng_for(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let k = splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    ChaCha8Rng::seed_from_u64(k)
}
