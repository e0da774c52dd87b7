//! Rating logs to implicit-feedback datasets: binarize, filter, split, persist.

mod format;
mod text;

use std::collections::HashMap;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

pub use text::{parse_ratings, read_ratings, Delimiter};

/// One line of a rating log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Which evaluation split a positive belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
    /// Not yet split.
    Unassigned,
}

impl Split {
    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
            Split::Unassigned => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Split::Train,
            1 => Split::Validation,
            2 => Split::Test,
            3 => Split::Unassigned,
            _ => return None,
        })
    }
}

/// Bidirectional token ↔ dense index map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `token`, assigning the next free index on first sight.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub(crate) fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut v = Vocab::new();
        for t in tokens {
            let n = v.len();
            if v.intern(&t) != n {
                return Err(Error::Corrupt(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(v)
    }

    /// Dense `0..n` vocabulary with decimal tokens.
    pub fn numbered(n: usize) -> Self {
        Self::from_tokens((0..n).map(|i| i.to_string()).collect()).expect("distinct tokens")
    }
}

/// A user's positive items in ascending order, each with its split label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserPositives {
    items: Vec<usize>,
    tags: Vec<Split>,
}

impl UserPositives {
    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn tags(&self) -> &[Split] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.items
            .iter()
            .zip(&self.tags)
            .filter(move |(_, &t)| t == split)
            .map(|(&i, _)| i)
    }
}

/// Binarized implicit feedback: per-user positive sets over a catalogue of
/// `n_items` items. Items a user has no positive for are unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitDataset {
    users: Vec<UserPositives>,
    user_vocab: Vocab,
    item_vocab: Vocab,
}

impl ImplicitDataset {
    /// Builds a dataset from per-user `(item, split)` lists, checking every invariant.
    pub fn from_parts(
        positives: Vec<Vec<(usize, Split)>>,
        user_vocab: Vocab,
        item_vocab: Vocab,
    ) -> Result<Self> {
        if positives.len() != user_vocab.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positive lists for {} users",
                positives.len(),
                user_vocab.len()
            )));
        }
        let n_items = item_vocab.len();
        let mut users = Vec::with_capacity(positives.len());
        for (u, mut list) in positives.into_iter().enumerate() {
            list.sort_unstable_by_key(|&(i, _)| i);
            if list.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Corrupt(format!(
                    "user {} has a duplicate positive",
                    user_vocab.token(u)
                )));
            }
            if let Some(&(i, _)) = list.iter().find(|&&(i, _)| i >= n_items) {
                return Err(Error::OutOfRange {
                    what: "item",
                    index: i,
                    bound: n_items,
                });
            }
            let (items, tags) = list.into_iter().unzip();
            users.push(UserPositives { items, tags });
        }
        Ok(Self {
            users,
            user_vocab,
            item_vocab,
        })
    }

    /// A dataset over numbered users and items where every listed positive is
    /// a training positive. Handy for synthetic data.
    pub fn from_train_lists(lists: Vec<Vec<usize>>, n_items: usize) -> Result<Self> {
        let n = lists.len();
        let parts = lists
            .into_iter()
            .map(|l| l.into_iter().map(|i| (i, Split::Train)).collect())
            .collect();
        Self::from_parts(parts, Vocab::numbered(n), Vocab::numbered(n_items))
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }

    pub fn n_positives(&self) -> usize {
        self.users.iter().map(|u| u.len()).sum()
    }

    pub fn user(&self, i: usize) -> &UserPositives {
        &self.users[i]
    }

    pub fn users(&self) -> &[UserPositives] {
        &self.users
    }

    pub fn user_vocab(&self) -> &Vocab {
        &self.user_vocab
    }

    pub fn item_vocab(&self) -> &Vocab {
        &self.item_vocab
    }

    /// Number of unobserved items for `user` (`K_i`).
    pub fn n_unobserved(&self, user: usize) -> usize {
        self.n_items() - self.users[user].len()
    }

    pub fn train_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.users[user].with_split(Split::Train)
    }

    pub fn items_in(&self, user: usize, split: Split) -> Vec<usize> {
        self.users[user].with_split(split).collect()
    }

    /// Per-user item lists for one split.
    pub fn split_lists(&self, split: Split) -> Vec<Vec<usize>> {
        (0..self.n_users()).map(|u| self.items_in(u, split)).collect()
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.users.iter().any(|u| u.tags.contains(&split))
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.users
            .iter()
            .map(|u| u.tags.iter().filter(|&&t| t == split).count())
            .sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::decode(bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Keeps ratings strictly above `threshold` as positives.
///
/// Users and items get dense indices in first-seen order over the whole
/// stream, including lines below the threshold, so the item catalogue also
/// covers items nobody liked. Repeated `(user, item)` pairs keep their
/// maximum rating.
pub fn binarize<I>(ratings: I, threshold: f64) -> Result<ImplicitDataset>
where
    I: IntoIterator<Item = RawRating>,
{
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold {threshold} is not finite")));
    }
    let mut users = Vocab::new();
    let mut items = Vocab::new();
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for r in ratings {
        if !r.rating.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rating for ({}, {}) is not finite",
                r.user, r.item
            )));
        }
        let u = users.intern(&r.user);
        let i = items.intern(&r.item);
        best.entry((u, i))
            .and_modify(|v| *v = v.max(r.rating))
            .or_insert(r.rating);
    }
    let mut lists = vec![Vec::new(); users.len()];
    for ((u, i), rating) in best {
        if rating > threshold {
            lists[u].push((i, Split::Unassigned));
        }
    }
    if lists.iter().all(|l| l.is_empty()) {
        return Err(Error::NoPositives);
    }
    ImplicitDataset::from_parts(lists, users, items)
}

/// Drops users with fewer than `min_pos` positives, then drops items left
/// without any positive. Surviving users and items keep their relative order.
pub fn filter_users(ds: &ImplicitDataset, min_pos: usize) -> Result<ImplicitDataset> {
    if min_pos == 0 {
        return Err(Error::InvalidArgument("min_pos must be at least 1".into()));
    }
    let kept: Vec<usize> = (0..ds.n_users())
        .filter(|&u| ds.users[u].len() >= min_pos)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut used = vec![false; ds.n_items()];
    for &u in &kept {
        for &i in ds.users[u].items() {
            used[i] = true;
        }
    }
    let mut remap = vec![usize::MAX; ds.n_items()];
    let mut item_tokens = Vec::new();
    for (i, _) in used.iter().enumerate().filter(|(_, &k)| k) {
        remap[i] = item_tokens.len();
        item_tokens.push(ds.item_vocab.token(i).to_owned());
    }
    let user_tokens = kept
        .iter()
        .map(|&u| ds.user_vocab.token(u).to_owned())
        .collect();
    let lists = kept
        .iter()
        .map(|&u| {
            let p = &ds.users[u];
            p.items
                .iter()
                .zip(&p.tags)
                .map(|(&i, &t)| (remap[i], t))
                .collect()
        })
        .collect();
    ImplicitDataset::from_parts(
        lists,
        Vocab::from_tokens(user_tokens)?,
        Vocab::from_tokens(item_tokens)?,
    )
}

/// Split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_frac: f64,
    /// Upper bound on training positives per user, applied after sampling.
    pub max_train_per_user: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.5,
            max_train_per_user: 10,
            seed: 42,
        }
    }
}

/// Labels each user's positives: `min(⌊frac·J⌋, cap)` uniformly sampled as
/// train, one of the rest as validation, everything else as test.
pub fn split(ds: &ImplicitDataset, cfg: &SplitConfig) -> Result<ImplicitDataset> {
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {}",
            cfg.train_frac
        )));
    }
    if cfg.max_train_per_user == 0 {
        return Err(Error::InvalidArgument("train cap must be at least 1".into()));
    }
    let mut out = ds.clone();
    for (u, p) in out.users.iter_mut().enumerate() {
        let j = p.len();
        let n_train = ((cfg.train_frac * j as f64).floor() as usize).min(cfg.max_train_per_user);
        if n_train == 0 || j < n_train + 2 {
            return Err(Error::TooFewPositives {
                user: ds.user_vocab.token(u).to_owned(),
                positives: j,
            });
        }
        let mut rng = rng::stream(cfg.seed, &[rng::DOMAIN_SPLIT, u as u64]);
        let picked = index::sample(&mut rng, j, n_train + 1);
        p.tags.iter_mut().for_each(|t| *t = Split::Test);
        for (k, pos) in picked.iter().enumerate() {
            p.tags[pos] = if k < n_train {
                Split::Train
            } else {
                Split::Validation
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(u: &str, i: &str, v: f64) -> RawRating {
        RawRating {
            user: u.into(),
            item: i.into(),
            rating: v,
            timestamp: None,
        }
    }

    fn counts_dataset(counts: &[usize]) -> ImplicitDataset {
        let n_items = *counts.iter().max().unwrap();
        let lists = counts.iter().map(|&c| (0..c).collect()).collect();
        ImplicitDataset::from_train_lists(lists, n_items).unwrap()
    }

    #[test]
    fn binarize_keeps_strictly_above_threshold() {
        let ds = binarize(vec![r("u1", "a", 4.0), r("u1", "b", 3.0), r("u2", "a", 5.0)], 3.0).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.user(0).items(), &[0]);
        assert_eq!(ds.user(1).items(), &[0]);
        assert_eq!(ds.item_vocab().token(1), "b");
    }

    #[test]
    fn binarize_without_positives_fails() {
        let err = binarize(vec![r("u", "a", 3.0), r("v", "b", 1.0)], 3.0).unwrap_err();
        assert!(matches!(err, Error::NoPositives));
    }

    #[test]
    fn binarize_duplicates_keep_max() {
        let a = binarize(vec![r("u", "a", 5.0), r("u", "a", 1.0)], 3.0).unwrap();
        let b = binarize(vec![r("u", "a", 1.0), r("u", "a", 5.0)], 3.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user(0).items(), &[0]);
    }

    #[test]
    fn binarize_rejects_nonfinite() {
        assert!(binarize(vec![r("u", "a", f64::NAN)], 3.0).is_err());
        assert!(binarize(vec![r("u", "a", 4.0)], f64::INFINITY).is_err());
    }

    #[test]
    fn filter_drops_small_users_and_orphan_items() {
        let ds = counts_dataset(&[5, 60, 61]);
        let f = filter_users(&ds, 60).unwrap();
        assert_eq!(f.n_users(), 2);
        assert_eq!(f.user_vocab().tokens(), &["1".to_string(), "2".to_string()]);
        assert_eq!(f.n_items(), 61);

        let ds = ImplicitDataset::from_train_lists(vec![vec![0, 3], vec![1]], 5).unwrap();
        let f = filter_users(&ds, 2).unwrap();
        assert_eq!(f.n_items(), 2);
        assert_eq!(f.user(0).items(), &[0, 1]);
        assert_eq!(f.item_vocab().tokens(), &["0".to_string(), "3".to_string()]);
    }

    #[test]
    fn filter_min_one_keeps_users_with_positives() {
        let ds = ImplicitDataset::from_train_lists(vec![vec![0], vec![], vec![1, 2]], 4).unwrap();
        let f = filter_users(&ds, 1).unwrap();
        assert_eq!(f.n_users(), 2);
        let ds = counts_dataset(&[1, 2, 3]);
        assert_eq!(filter_users(&ds, 1).unwrap(), ds);
    }

    #[test]
    fn filter_everything_is_an_error() {
        let ds = counts_dataset(&[1, 2]);
        assert!(matches!(filter_users(&ds, 3), Err(Error::EmptyDataset)));
        assert!(filter_users(&ds, 0).is_err());
    }

    fn split_counts(ds: &ImplicitDataset, u: usize) -> (usize, usize, usize) {
        (
            ds.items_in(u, Split::Train).len(),
            ds.items_in(u, Split::Validation).len(),
            ds.items_in(u, Split::Test).len(),
        )
    }

    #[test]
    fn split_protocol_counts() {
        let ds = counts_dataset(&[20, 40, 3]);
        let s = split(&ds, &SplitConfig::default()).unwrap();
        assert_eq!(split_counts(&s, 0), (10, 1, 9));
        assert_eq!(split_counts(&s, 1), (10, 1, 29));
        assert_eq!(split_counts(&s, 2), (1, 1, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = counts_dataset(&[20, 33, 7, 12]);
        let cfg = SplitConfig::default();
        assert_eq!(split(&ds, &cfg).unwrap(), split(&ds, &cfg).unwrap());
        let other = SplitConfig { seed: 7, ..cfg };
        assert_ne!(split(&ds, &cfg).unwrap(), split(&ds, &other).unwrap());
    }

    #[test]
    fn split_rejects_small_users() {
        let ds = counts_dataset(&[20, 2]);
        match split(&ds, &SplitConfig::default()) {
            Err(Error::TooFewPositives { user, positives }) => {
                assert_eq!(user, "1");
                assert_eq!(positives, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = SplitConfig {
            train_frac: 1.0,
            ..SplitConfig::default()
        };
        assert!(split(&counts_dataset(&[20]), &bad).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_each_user(
            counts in proptest::collection::vec(3usize..40, 1..12),
            seed in 0u64..1000,
            frac in 0.3f64..0.9,
            cap in 1usize..12,
        ) {
            let ds = counts_dataset(&counts);
            let cfg = SplitConfig { train_frac: frac, max_train_per_user: cap, seed };
            let Ok(s) = split(&ds, &cfg) else {
                return Ok(());
            };
            for (u, &j) in counts.iter().enumerate() {
                let p = s.user(u);
                proptest::prop_assert_eq!(p.items(), ds.user(u).items());
                proptest::prop_assert!(p.tags().iter().all(|&t| t != Split::Unassigned));
                let n_train = ((frac * j as f64).floor() as usize).min(cap);
                proptest::prop_assert_eq!(split_counts(&s, u), (n_train, 1, j - n_train - 1));
            }
            proptest::prop_assert_eq!(split(&ds, &cfg).unwrap().to_bytes().unwrap(), s.to_bytes().unwrap());
            proptest::prop_assert_eq!(filter_users(&ds, 1).unwrap().n_users(), counts.len());
        }
    }
}
