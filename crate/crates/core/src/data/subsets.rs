use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Nested, seeded subsets of `0..available` with the requested ascending
/// sizes: every smaller subset is a prefix of every larger one, so an
/// adaptation sweep compares like with like.
pub fn split_adaptation_subsets(available: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("adaptation sizes must be strictly ascending, got {sizes:?}")));
    }
    if let Some(&too_big) = sizes.iter().find(|&&s| s > available) {
        return Err(Error::Config(format!(
            "adaptation size {too_big} exceeds the {available} available utterances"
        )));
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes.iter().map(|&s| order[..s].to_vec()).collect())
}
