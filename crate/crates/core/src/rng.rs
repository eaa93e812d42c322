//! Seed derivation. Every random stream in a run is keyed by the global seed
//! plus a purpose tag and coordinates, so draws never depend on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags for independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    Samples = 2,
    Split = 3,
    Partition = 4,
    Init = 5,
    PretrainShuffle = 6,
    ClientSampling = 7,
    ClientLocal = 8,
    Dropout = 9,
    DpNoise = 10,
    Public = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream tag and an arbitrary coordinate path.
pub fn derive_seed(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, path))
}
