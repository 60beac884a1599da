//! Rationale corruption baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{TaskInstance, Vocabulary};

/// Replace every rationale token with a uniformly random non-reserved
/// vocabulary token. Lengths, questions, and labels are untouched.
pub fn corrupt_replace(
    instances: &[TaskInstance],
    vocab: &Vocabulary,
    seed: u64,
) -> Vec<TaskInstance> {
    let pool = vocab.replacement_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances
        .iter()
        .map(|inst| {
            let mut out = inst.clone();
            for t in &mut out.ftr {
                *t = rng.random_range(pool.clone());
            }
            out
        })
        .collect()
}

const SHUFFLE_ATTEMPTS: usize = 100;

/// Shuffle rationales across instances, re-sampling until no instance keeps
/// its own (bounded retries). The rationale multiset is preserved.
pub fn corrupt_shuffle(instances: &[TaskInstance], seed: u64) -> Result<Vec<TaskInstance>> {
    let n = instances.len();
    if n < 2 {
        return Err(Error::Corruption(
            "cannot shuffle rationales across fewer than 2 instances".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..SHUFFLE_ATTEMPTS {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    Ok(instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut out = inst.clone();
            out.ftr = instances[perm[i]].ftr.clone();
            out
        })
        .collect())
}
