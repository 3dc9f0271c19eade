use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// Address of an independent random stream: a root seed plus a stream index.
///
/// Streams form a tree through [`RngStream::child`], so a work unit can be
/// given its own generator from its position alone (replicate `i`, draw `b`,
/// ...) without any coordination between threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream `index` below this one.
    pub fn child(&self, index: u64) -> Self {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id ^ 0x6a09_e667_f3bc_c909));
        Self { seed, stream_id: index }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
