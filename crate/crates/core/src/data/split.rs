use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::interactions::InteractionSet;

/// Per-user partition of positives into train and test items.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub fraction: f64,
    /// Train items per user, sorted.
    pub train: Vec<Vec<usize>>,
    /// Test items per user, sorted.
    pub test: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    pub fn is_train(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }
}

/// Number of train items for a user with `n` positives: `⌊fraction·n⌋`,
/// clamped so there is at least one train item and, when `n ≥ 2`, one test item.
pub fn train_count(n: usize, fraction: f64) -> usize {
    if n <= 1 {
        return n;
    }
    // Guard against 0.7 * 10 = 6.999... style rounding.
    let raw = (fraction * n as f64 + 1e-9).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Splits each user's positives. With timestamps the earliest items train
/// (ties broken by item index); otherwise a seeded uniform shuffle decides.
pub fn split_per_user(interactions: &InteractionSet, fraction: f64, seed: u64) -> SplitPlan {
    assert!(
        fraction > 0.0 && fraction < 1.0,
        "split fraction must lie in (0, 1), got {fraction}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chronological = interactions.has_timestamps();
    let mut train = Vec::with_capacity(interactions.num_users());
    let mut test = Vec::with_capacity(interactions.num_users());
    for mut records in interactions.by_user() {
        if chronological {
            records.sort_by_key(|r| (r.timestamp, r.item));
        } else {
            records.sort_by_key(|r| r.item);
            records.shuffle(&mut rng);
        }
        let n_train = train_count(records.len(), fraction);
        let mut tr: Vec<usize> = records[..n_train].iter().map(|r| r.item).collect();
        let mut te: Vec<usize> = records[n_train..].iter().map(|r| r.item).collect();
        tr.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        test.push(te);
    }
    SplitPlan {
        seed,
        fraction,
        train,
        test,
    }
}
