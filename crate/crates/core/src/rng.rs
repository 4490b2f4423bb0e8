//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, worker_id, iteration, draw_index)`:
//! the ChaCha key comes from the seed, the stream id is the worker and the
//! word position encodes the iteration. A worker's samples at iteration `t`
//! are therefore the same no matter which algorithm consumes them or which
//! thread runs the worker.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

/// 2^32 words (16 GiB of keystream) reserved per iteration.
const WORDS_PER_ITERATION_LOG2: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRng {
    seed: u64,
    worker: u64,
}

impl WorkerRng {
    pub fn new(seed: u64, worker: usize) -> Self {
        Self {
            seed,
            worker: worker as u64,
        }
    }

    /// Generator positioned at the first draw of `iteration`.
    pub fn at(&self, iteration: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.worker);
        rng.set_word_pos(u128::from(iteration) << WORDS_PER_ITERATION_LOG2);
        rng
    }
}
