//! Reproducible per-trajectory random streams.
//!
//! Each trajectory draws from its own ChaCha8 stream: the master seed keys the
//! generator and the trajectory index selects one of its 2⁶⁴ counter streams.
//! Streams are therefore a pure function of `(master_seed, stream_index)` and
//! do not depend on which worker runs them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Stream for trajectory `i` of an ensemble keyed by `master_seed`.
pub fn substream(master_seed: u64, i: u64) -> SeedSpec {
    debug_assert!(i < 1 << 63, "stream index out of range");
    SeedSpec::new(master_seed, i)
}
