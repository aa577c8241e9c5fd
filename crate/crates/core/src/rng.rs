//! Seeded RNG streams.
//!
//! Every random choice in the crate flows from a `u64` seed through
//! ChaCha8. Per-sample work (attack initialization, target-class draws)
//! uses stream id = 1 + dataset sample index so that serial and parallel
//! runs produce identical bytes; stream 0 is reserved for run-level
//! choices such as shuffling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Run-level stream (shuffles, initialization).
pub fn run_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one sample of a run.
pub fn sample_rng(seed: u64, sample_index: usize) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + sample_index as u64);
    rng
}

/// Seeded Fisher-Yates permutation of 0..n.
pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    use rand::Rng as _;
    let mut rng = run_rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
