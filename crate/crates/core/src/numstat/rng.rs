use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Addressable random stream.
///
/// A stream is a `(seed, stream_id)` pair backed by ChaCha8, whose 64-bit
/// stream selector gives independent keystreams for the same key. Streams are
/// plain values: deriving a child stream never touches the parent's state, so
/// per-client and per-round randomness does not depend on execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

/// Domain tags used when deriving child streams.
pub mod tag {
    pub const DATASET: u64 = 0x01;
    pub const PARTITION: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const CLIENT: u64 = 0x04;
    pub const DEFENSE: u64 = 0x05;
    pub const TARGETS: u64 = 0x06;
    pub const ROUND: u64 = 0x07;
    pub const EPOCH: u64 = 0x08;
    pub const BATCH: u64 = 0x09;
    pub const AUGMENT: u64 = 0x0a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub const fn root(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// Child stream addressed by `tag`. Distinct tags give distinct stream ids
    /// with overwhelming probability; the mapping is a fixed bijective mix.
    pub fn derive(self, tag: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_mul(0xd6e8_feb8_6659_fd93)));
        Self::new(self.seed, id)
    }

    pub fn derive2(self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
