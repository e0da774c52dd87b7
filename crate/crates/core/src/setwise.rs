//! Setwise preference probabilities and the MF objective.
//!
//! Scores map to positive weights through `phi(x) = exp(sigmoid(x))`. A list
//! of scored items induces a Plackett-Luce style distribution over orderings;
//! the setwise likelihood only needs its top-1 marginal, the probability that
//! a positive item heads the list formed by itself and the user's unobserved
//! items.

use crate::data_io::ImplicitDataset;
use crate::error::{Error, Result};
use crate::model::FactorModel;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln phi(x)`, which is the sigmoid itself.
#[inline]
pub fn log_phi(x: f64) -> f64 {
    sigmoid(x)
}

/// The positive, strictly increasing weight `phi(x) = exp(sigmoid(x))`, valued in (1, e).
#[inline]
pub fn phi(x: f64) -> f64 {
    sigmoid(x).exp()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// A scored list of items, optionally with a designated head (the positive
/// item of a setwise comparison list).
#[derive(Debug, Clone, PartialEq)]
pub struct ItemList {
    scores: Vec<f64>,
    head: usize,
}

impl ItemList {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        Self::with_head(scores, 0)
    }

    pub fn with_head(scores: Vec<f64>, head: usize) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("item list must not be empty".into()));
        }
        if let Some(p) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("item list score at position {p}"),
            });
        }
        if head >= scores.len() {
            return Err(Error::OutOfRange {
                what: "head index",
                index: head,
                bound: scores.len(),
            });
        }
        Ok(Self { scores, head })
    }

    /// The list `{positive} ∪ negatives` with the positive at position 0.
    pub fn setwise(positive: f64, negatives: &[f64]) -> Result<Self> {
        let mut scores = Vec::with_capacity(negatives.len() + 1);
        scores.push(positive);
        scores.extend_from_slice(negatives);
        Self::with_head(scores, 0)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn head(&self) -> usize {
        self.head
    }

    /// Top-1 probability of the head item.
    pub fn head_probability(&self) -> f64 {
        top1_distribution(self)[self.head]
    }
}

/// Probability of observing the full ordering `perm` (0-based positions into
/// the list, most preferred first) under sequential choice without replacement.
pub fn permutation_probability(list: &ItemList, perm: &[usize]) -> Result<f64> {
    let m = list.len();
    if perm.len() != m {
        return Err(Error::InvalidArgument(format!(
            "permutation has {} entries for a list of {m}",
            perm.len()
        )));
    }
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of 0..{m}"
            )));
        }
        seen[p] = true;
    }

    let weights: Vec<f64> = perm.iter().map(|&p| phi(list.scores[p])).collect();
    // suffix sums of the remaining weights at each stage
    let mut remaining = CompensatedSum::from_iter(weights.iter().copied()).value();
    let mut prob = 1.0;
    for w in &weights {
        prob *= w / remaining;
        remaining -= w;
    }
    Ok(prob)
}

/// Top-1 probability of the item at position `d`.
pub fn top1_probability(list: &ItemList, d: usize) -> Result<f64> {
    if d >= list.len() {
        return Err(Error::OutOfRange {
            what: "list position",
            index: d,
            bound: list.len(),
        });
    }
    let total = list.scores.iter().map(|&s| phi(s)).collect::<CompensatedSum>();
    Ok(phi(list.scores[d]) / total.value())
}

/// Top-1 probabilities of every position.
pub fn top1_distribution(list: &ItemList) -> Vec<f64> {
    let weights: Vec<f64> = list.scores.iter().map(|&s| phi(s)).collect();
    let total = weights.iter().copied().collect::<CompensatedSum>().value();
    weights.into_iter().map(|w| w / total).collect()
}

/// `ln[phi(pos) / (phi(pos) + Σ phi(neg))]` from raw scores.
///
/// An empty negative set yields 0, the log of a certain event.
pub fn setwise_log_prob_from_scores(positive: f64, negatives: &[f64]) -> f64 {
    if negatives.is_empty() {
        return 0.0;
    }
    let lp = log_phi(positive);
    let mut total = negatives.iter().map(|&s| phi(s)).collect::<CompensatedSum>();
    total.add(lp.exp());
    lp - total.value().ln()
}

/// Log-probability that `user` prefers `positive` over the whole `negatives` set.
///
/// Returns 0 for an empty negative set, so users without sampled negatives
/// contribute nothing to the objective instead of failing.
pub fn setwise_log_prob(
    model: &FactorModel,
    user: usize,
    positive: usize,
    negatives: &[usize],
) -> Result<f64> {
    if negatives.contains(&positive) {
        return Err(Error::InvalidArgument(format!(
            "positive item {positive} also appears among the negatives"
        )));
    }
    let pos = model.score(user, positive)?;
    let neg = negatives
        .iter()
        .map(|&k| model.score(user, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(setwise_log_prob_from_scores(pos, &neg))
}

/// The regularised negative log posterior over training positives:
/// `Σ_i Σ_{j ∈ train(i)} -ln p(j > negatives(i)) + λ/2 (‖U‖² + ‖V‖²)`.
pub fn objective(
    model: &FactorModel,
    ds: &ImplicitDataset,
    negatives: &[Vec<usize>],
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularization must be non-negative, got {lambda}"
        )));
    }
    model.check_dims(ds)?;
    if negatives.len() != ds.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} negative sets for {} users",
            negatives.len(),
            ds.n_users()
        )));
    }
    let mut total = CompensatedSum::new();
    for (user, negs) in negatives.iter().enumerate() {
        let neg_scores = negs
            .iter()
            .map(|&k| model.score(user, k))
            .collect::<Result<Vec<_>>>()?;
        for j in ds.train_items(user) {
            total.add(-setwise_log_prob_from_scores(model.score(user, j)?, &neg_scores));
        }
    }
    total.add(0.5 * lambda * (model.users().squared_norm() + model.items().squared_norm()));
    let value = total.value();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "objective".into(),
        });
    }
    Ok(value)
}
