use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed plus stream identifier for a counter-based ChaCha generator.
///
/// Every consumer of randomness (dropout sites, shuffles, initializers)
/// forks its own stream with a fixed tag, so draws do not depend on the
/// order in which other consumers ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derive a child stream. Distinct tags give independent streams.
    pub fn fork(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix(self.stream.wrapping_add(mix(tag ^ 0xa076_1d64_78bd_642f))),
        }
    }

    /// Fresh generator positioned at draw index 0 of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
