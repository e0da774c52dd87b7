//! Top-P ranking metrics and the held-out ranking protocol.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data_io::{ImplicitDataset, Split};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::par;

/// Descending score, ascending item index on ties.
#[inline]
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `top` best candidates (all of them if `top` is `None`) in rank order.
pub fn top_candidates(
    scores: &[f64],
    excluded: impl Fn(usize) -> bool,
    top: Option<usize>,
) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|&(l, _)| !excluded(l))
        .map(|(l, &s)| (s, l))
        .collect();
    if let Some(k) = top {
        if k == 0 {
            return Vec::new();
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, rank_order);
            cand.truncate(k);
        }
    }
    cand.sort_unstable_by(rank_order);
    cand.into_iter().map(|(_, l)| l).collect()
}

/// Every item except `user`'s train and validation positives, best first.
pub fn rank_items(model: &FactorModel, ds: &ImplicitDataset, user: usize) -> Result<Vec<usize>> {
    model.check_dims(ds)?;
    let scores = model.score_user(user)?;
    let p = ds.user(user);
    Ok(top_candidates(&scores, |l| seen_in_training(p, l), None))
}

fn seen_in_training(p: &crate::data_io::UserPositives, item: usize) -> bool {
    match p.items().binary_search(&item) {
        Ok(k) => matches!(p.tags()[k], Split::Train | Split::Validation),
        Err(_) => false,
    }
}

fn hits_prefix(ranking: &[usize], relevant: &[usize], p: usize) -> usize {
    ranking
        .iter()
        .take(p)
        .filter(|l| relevant.binary_search(l).is_ok())
        .count()
}

/// Fraction of the top `p` that is relevant. `relevant` must be sorted.
pub fn precision_at(ranking: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(p >= 1, "cutoff must be at least 1");
    hits_prefix(ranking, relevant, p) as f64 / p as f64
}

/// Fraction of `relevant` found in the top `p`. `relevant` must be sorted and non-empty.
pub fn recall_at(ranking: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(p >= 1, "cutoff must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    hits_prefix(ranking, relevant, p) as f64 / relevant.len() as f64
}

/// Average precision over the top `p`, normalised by `min(p, |relevant|)`
/// so that a perfect prefix scores 1.
pub fn average_precision_at(ranking: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(p >= 1, "cutoff must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, l) in ranking.iter().take(p).enumerate() {
        if relevant.binary_search(l).is_ok() {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    acc / p.min(relevant.len()) as f64
}

/// Which held-out positives to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Rank everything except train and validation positives; test positives are relevant.
    Test,
    /// Rank everything except train positives; the validation positive is relevant.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: String,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub average_precision: Vec<f64>,
}

/// Mean metrics per cutoff over users with at least one relevant item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub map: Vec<f64>,
    pub users_evaluated: usize,
    /// Users excluded because they have no relevant held-out item.
    pub users_skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_user: Option<Vec<UserMetrics>>,
}

impl EvalReport {
    pub fn precision_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs
            .iter()
            .position(|&c| c == cutoff)
            .map(|k| self.precision[k])
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("cutoff\tprecision\trecall\tmap\tusers\n");
        for (k, c) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{c}\t{:.6}\t{:.6}\t{:.6}\t{}",
                self.precision[k], self.recall[k], self.map[k], self.users_evaluated
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-user rows: user, cutoff, precision, recall, average precision.
    pub fn per_user_tsv(&self) -> Option<String> {
        let rows = self.per_user.as_ref()?;
        let mut s = String::from("user\tcutoff\tprecision\trecall\tap\n");
        for r in rows {
            for (k, c) in self.cutoffs.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{}\t{c}\t{:.6}\t{:.6}\t{:.6}",
                    r.user, r.precision[k], r.recall[k], r.average_precision[k]
                );
            }
        }
        Some(s)
    }
}

/// Expected test P@`p` of a uniformly random ranking of each user's
/// candidates, averaged over users with test positives.
pub fn random_precision_at(ds: &ImplicitDataset, p: usize) -> f64 {
    let (mut total, mut users) = (0.0, 0usize);
    for u in 0..ds.n_users() {
        let pos = ds.user(u);
        let test = pos.with_split(Split::Test).count();
        if test == 0 || p == 0 {
            continue;
        }
        let seen = pos.len() - test - pos.with_split(Split::Unassigned).count();
        let candidates = ds.n_items() - seen;
        total += p.min(candidates) as f64 * test as f64 / candidates as f64 / p as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// Evaluates `model` on `ds` at each cutoff.
pub fn evaluate(
    model: &FactorModel,
    ds: &ImplicitDataset,
    cutoffs: &[usize],
    target: Target,
    keep_per_user: bool,
) -> Result<EvalReport> {
    model.check_dims(ds)?;
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::InvalidArgument(
            "cutoffs must be a non-empty list of positive integers".into(),
        ));
    }
    let depth = *cutoffs.iter().max().expect("non-empty");
    let relevant_split = match target {
        Target::Test => Split::Test,
        Target::Validation => Split::Validation,
    };

    let rows: Vec<Option<UserMetrics>> = par::map_range(ds.n_users(), |u| {
        let p = ds.user(u);
        let relevant: Vec<usize> = p.with_split(relevant_split).collect();
        if relevant.is_empty() {
            return None;
        }
        let scores = model.score_user(u).expect("dims checked");
        let excluded = |l: usize| match p.items().binary_search(&l) {
            Ok(k) => match target {
                Target::Test => matches!(p.tags()[k], Split::Train | Split::Validation),
                Target::Validation => p.tags()[k] == Split::Train,
            },
            Err(_) => false,
        };
        let top = top_candidates(&scores, excluded, Some(depth));
        Some(UserMetrics {
            user: ds.user_vocab().token(u).to_owned(),
            precision: cutoffs.iter().map(|&c| precision_at(&top, &relevant, c)).collect(),
            recall: cutoffs.iter().map(|&c| recall_at(&top, &relevant, c)).collect(),
            average_precision: cutoffs
                .iter()
                .map(|&c| average_precision_at(&top, &relevant, c))
                .collect(),
        })
    });

    let k = cutoffs.len();
    let (mut prec, mut rec, mut map) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut evaluated = 0usize;
    for r in rows.iter().flatten() {
        evaluated += 1;
        for c in 0..k {
            prec[c] += r.precision[c];
            rec[c] += r.recall[c];
            map[c] += r.average_precision[c];
        }
    }
    if evaluated > 0 {
        let n = evaluated as f64;
        for v in [&mut prec, &mut rec, &mut map] {
            v.iter_mut().for_each(|x| *x /= n);
        }
    }
    Ok(EvalReport {
        cutoffs: cutoffs.to_vec(),
        precision: prec,
        recall: rec,
        map,
        users_evaluated: evaluated,
        users_skipped: ds.n_users() - evaluated,
        per_user: keep_per_user.then(|| rows.into_iter().flatten().collect()),
    })
}
