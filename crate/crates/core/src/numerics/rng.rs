//! Seeded, stream-addressable RNG.
//!
//! ChaCha is counter based, so a `(seed, stream_id)` pair pins down the whole
//! sequence regardless of how work is scheduled across threads. Chains,
//! synthetic-data groups, and test fixtures each own a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngState {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngState { seed, stream_id }
    }

    /// A derived state for a sub-stream (e.g. chain k of a run).
    pub fn substream(&self, k: u64) -> Self {
        RngState { seed: self.seed, stream_id: self.stream_id.wrapping_mul(0x1000).wrapping_add(k) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}
