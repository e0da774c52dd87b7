//! Wall-clock comparison of the fast and naive gradient paths.

use std::time::{Duration, Instant};

use rand::seq::index;
use serde::Serialize;

use super::gradients::{fast_gradients_from_lists, naive_gradients_from_lists, Reduction};
use crate::error::Result;
use crate::model::{FactorModel, TrainConfig};
use crate::{par, rng};

/// A synthetic gradient workload: every user has `j` positives and `tau · j` negatives.
#[derive(Debug, Clone)]
pub struct GradientProblem {
    pub model: FactorModel,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

/// Builds a problem over `2 (1 + tau) j` items so positives and negatives fit.
pub fn synthetic_gradient_problem(
    j: usize,
    tau: usize,
    rank: usize,
    n_users: usize,
    seed: u64,
) -> Result<GradientProblem> {
    let n_items = (2 * (1 + tau) * j).max(2);
    let cfg = TrainConfig {
        rank,
        seed,
        init_std: 0.1,
        ..TrainConfig::default()
    };
    let model = FactorModel::init(n_users, n_items, &cfg)?;
    let (positives, negatives) = (0..n_users)
        .map(|u| {
            let mut r = rng::stream(seed, &[rng::DOMAIN_BENCH, u as u64]);
            let picked = index::sample(&mut r, n_items, j + tau * j).into_vec();
            (picked[..j].to_vec(), picked[j..].to_vec())
        })
        .unzip();
    Ok(GradientProblem {
        model,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub j: usize,
    pub tau: usize,
    pub rank: usize,
    pub n_users: usize,
    pub naive_secs: f64,
    pub fast_secs: f64,
    /// naive / fast
    pub ratio: f64,
}

impl BenchReport {
    pub const TSV_HEADER: &'static str = "J\ttau\tr\tN\tnaive_secs\tfast_secs\tratio";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}",
            self.j, self.tau, self.rank, self.n_users, self.naive_secs, self.fast_secs, self.ratio
        )
    }
}

fn best_of<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<Duration> {
    let mut best = Duration::MAX;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed());
    }
    Ok(best)
}

/// Times both gradient paths on the same single-threaded workload and
/// reports the best of `reps` runs for each.
pub fn bench_grad(
    j: usize,
    tau: usize,
    rank: usize,
    n_users: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    let p = synthetic_gradient_problem(j, tau, rank, n_users, seed)?;
    par::with_threads(1, || {
        let naive = best_of(reps, || {
            naive_gradients_from_lists(&p.model, &p.positives, &p.negatives, 0.1).map(|_| ())
        })?;
        let fast = best_of(reps, || {
            fast_gradients_from_lists(&p.model, &p.positives, &p.negatives, 0.1, Reduction::Ordered)
                .map(|_| ())
        })?;
        Ok(BenchReport {
            j,
            tau,
            rank,
            n_users,
            naive_secs: naive.as_secs_f64(),
            fast_secs: fast.as_secs_f64(),
            ratio: naive.as_secs_f64() / fast.as_secs_f64().max(1e-12),
        })
    })
}
