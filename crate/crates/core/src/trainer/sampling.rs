use rand::seq::index;
use rand::Rng;

use crate::data_io::ImplicitDataset;
use crate::par;
use crate::rng;

/// Draws `count` distinct items uniformly from `0..n_items` minus the sorted
/// `positives`, without materialising the complement.
pub fn sample_unobserved<R: Rng + ?Sized>(
    positives: &[usize],
    n_items: usize,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n_unobserved = n_items - positives.len();
    let count = count.min(n_unobserved);
    if count == 0 {
        return Vec::new();
    }
    let mut picked = index::sample(rng, n_unobserved, count).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|t| t + positives_before_gap(positives, t))
        .collect()
}

/// Number of positives preceding the `t`-th unobserved item, i.e. the count of
/// `j` with `positives[j] - j <= t`. That sequence is non-decreasing, so binary search.
fn positives_before_gap(positives: &[usize], t: usize) -> usize {
    let (mut lo, mut hi) = (0, positives.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if positives[mid] - mid <= t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Uniform sample of `min(tau · J_train, K)` unobserved items for `user`,
/// where unobserved means not positive in any split.
pub fn sample_negatives<R: Rng + ?Sized>(
    ds: &ImplicitDataset,
    user: usize,
    tau: usize,
    rng: &mut R,
) -> Vec<usize> {
    let p = ds.user(user);
    let n_train = ds.train_items(user).count();
    if n_train > 0 && ds.n_unobserved(user) == 0 {
        log::warn!(
            "user {} has no unobserved items; no negatives sampled",
            ds.user_vocab().token(user)
        );
    }
    sample_unobserved(p.items(), ds.n_items(), tau * n_train, rng)
}

/// Negative sets for every user in one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: usize,
    pub negatives: Vec<Vec<usize>>,
}

impl EpochPlan {
    /// Samples each user from its own `(seed, epoch, user)` stream, so the plan
    /// does not depend on thread scheduling.
    pub fn sample(ds: &ImplicitDataset, tau: usize, seed: u64, epoch: usize) -> Self {
        let negatives = par::map_range(ds.n_users(), |u| {
            let mut r = rng::stream(seed, &[rng::DOMAIN_NEGATIVES, epoch as u64, u as u64]);
            sample_negatives(ds, u, tau, &mut r)
        });
        Self { epoch, negatives }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{Split, Vocab};

    #[test]
    fn complement_mapping_is_exact() {
        let mut r = rng::stream(0, &[]);
        let pos = [1, 3, 4, 9];
        let all = sample_unobserved(&pos, 10, 100, &mut r);
        assert_eq!(all, vec![0, 2, 5, 6, 7, 8]);
        assert!(sample_unobserved(&[0, 1, 2], 3, 5, &mut r).is_empty());
        assert_eq!(sample_unobserved(&[], 4, 4, &mut r), vec![0, 1, 2, 3]);
    }

    fn ds_one_user(train: &[usize], other: &[usize], n_items: usize) -> ImplicitDataset {
        let list = train
            .iter()
            .map(|&i| (i, Split::Train))
            .chain(other.iter().map(|&i| (i, Split::Test)))
            .collect();
        ImplicitDataset::from_parts(vec![list], Vocab::numbered(1), Vocab::numbered(n_items)).unwrap()
    }

    #[test]
    fn tau_times_train_positives() {
        let ds = ds_one_user(&[0, 5], &[7], 100);
        let mut r = rng::stream(1, &[]);
        let neg = sample_negatives(&ds, 0, 3, &mut r);
        assert_eq!(neg.len(), 6);
        let mut d = neg.clone();
        d.dedup();
        assert_eq!(d.len(), 6);
        assert!(neg.iter().all(|i| ![0, 5, 7].contains(i)));
    }

    #[test]
    fn clamped_to_unobserved_count() {
        let ds = ds_one_user(&[0, 1, 2], &[3], 6);
        let mut r = rng::stream(1, &[]);
        assert_eq!(sample_negatives(&ds, 0, 3, &mut r), vec![4, 5]);
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // each unobserved item is drawn with probability K̃/K per epoch
        let ds = ds_one_user(&[2, 11], &[5, 17], 30);
        let k = 26usize;
        let k_tilde = 6usize;
        let epochs = 100_000;
        let mut counts = vec![0usize; 30];
        for e in 0..epochs {
            let mut r = rng::stream(99, &[e as u64]);
            for i in sample_negatives(&ds, 0, 3, &mut r) {
                counts[i] += 1;
            }
        }
        let p = k_tilde as f64 / k as f64;
        let se = (p * (1.0 - p) / epochs as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            if [2, 5, 11, 17].contains(&i) {
                assert_eq!(c, 0);
            } else {
                let f = c as f64 / epochs as f64;
                assert!((f - p).abs() <= 4.0 * se, "item {i}: {f} vs {p}");
            }
        }
    }

    #[test]
    fn plan_is_reproducible() {
        let ds = ds_one_user(&[0, 5], &[7], 100);
        assert_eq!(EpochPlan::sample(&ds, 3, 4, 2), EpochPlan::sample(&ds, 3, 4, 2));
        assert_ne!(EpochPlan::sample(&ds, 3, 4, 2), EpochPlan::sample(&ds, 3, 4, 3));
    }
}
