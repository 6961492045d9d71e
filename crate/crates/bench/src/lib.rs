//! Shared helpers for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simba_core::InputStack;

/// A reproducible random two-channel input at the given side length.
pub fn random_stack(side: usize, seed: u64) -> InputStack<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    InputStack {
        width: side,
        height: side,
        data: (0..2 * side * side)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    }
}
