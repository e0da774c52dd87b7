//! Generative checks of the setwise model.
//!
//! A [`SyntheticWorld`] holds a low-rank ground-truth score matrix. Drawing
//! `Y_il ~ Exp(φ(X_il))` and taking each row's `J` smallest entries as
//! positives realises preference structures whose probability is exactly the
//! setwise likelihood. The excess risk of a fitted model is the mean KL
//! divergence between true and fitted top-1 distributions over the lists
//! `{j} ∪ O_i`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data_io::ImplicitDataset;
use crate::error::{Error, Result};
use crate::model::{FactorMatrix, FactorModel, TrainConfig};
use crate::rng::{self, StreamRng};
use crate::setwise::{log_phi, phi, CompensatedSum};
use crate::trainer::train;
use crate::par;

/// Parameters of a ground-truth world.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    /// Positives per user (shared by all users).
    pub positives_per_user: usize,
    /// Bound on `max |ln φ(X*)|`.
    pub alpha: f64,
    pub seed: u64,
    pub replicate: u64,
}

/// Ground-truth scores `X* = U*ᵀV*`, row-major `N × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    config: WorldConfig,
    truth: FactorModel,
    scores: Vec<f64>,
}

/// Per-user positive sets realised from a world.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDraw {
    /// Sorted positives of each user.
    pub positives: Vec<Vec<usize>>,
}

impl PreferenceDraw {
    /// Every drawn positive as a training positive.
    pub fn to_dataset(&self, n_items: usize) -> Result<ImplicitDataset> {
        ImplicitDataset::from_train_lists(self.positives.clone(), n_items)
    }
}

/// Ratio of a rank's standard normal entries to the scores they produce;
/// entries of `X*` then have unit variance.
fn factor_std(rank: usize) -> f64 {
    (rank as f64).powf(-0.25)
}

impl SyntheticWorld {
    /// Draws `U*` and `V*` with i.i.d. normal entries, scaled down if needed
    /// so that `max σ(X*) <= alpha`.
    ///
    /// Item factors come from one stream and each user's factors from its
    /// own, so a world with more users extends a smaller one with the same
    /// seed and replicate.
    pub fn generate(config: WorldConfig) -> Result<Self> {
        let WorldConfig {
            n_users,
            n_items,
            rank,
            positives_per_user: j,
            ..
        } = config;
        if n_users == 0 || rank == 0 {
            return Err(Error::InvalidArgument("world needs users and rank >= 1".into()));
        }
        if j == 0 || j >= n_items {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= J < M, got J = {j}, M = {n_items}"
            )));
        }
        if !(config.alpha > 0.5) {
            return Err(Error::InvalidArgument(format!(
                "alpha must exceed 0.5 = σ(0), got {}",
                config.alpha
            )));
        }
        let std = factor_std(rank);
        let mut item_rng = rng::stream(config.seed, &[rng::DOMAIN_WORLD, config.replicate, 0]);
        let items: Vec<f64> = (0..rank * n_items)
            .map(|_| std * item_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let users: Vec<f64> = par::map_range(n_users, |u| {
            let mut r = rng::stream(config.seed, &[rng::DOMAIN_WORLD, config.replicate, 1, u as u64]);
            (0..rank)
                .map(|_| std * r.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>()
        })
        .concat();
        let mut truth = FactorModel::from_factors(
            FactorMatrix::from_columns(rank, n_users, users)?,
            FactorMatrix::from_columns(rank, n_items, items)?,
        )?;
        let mut scores = truth.score_matrix();

        if config.alpha < 1.0 {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let limit = (config.alpha / (1.0 - config.alpha)).ln();
            if max > limit {
                let c = limit / max;
                truth.users_mut().as_mut_slice().iter_mut().for_each(|x| *x *= c);
                scores = truth.score_matrix();
            }
        }
        Ok(Self {
            config,
            truth,
            scores,
        })
    }

    /// A world with explicit scores (row-major `n_users × n_items`).
    pub fn from_scores(
        n_users: usize,
        n_items: usize,
        positives_per_user: usize,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if scores.len() != n_users * n_items {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {n_users}x{n_items}",
                scores.len()
            )));
        }
        if positives_per_user == 0 || positives_per_user >= n_items {
            return Err(Error::InvalidArgument("need 1 <= J < M".into()));
        }
        let config = WorldConfig {
            n_users,
            n_items,
            rank: 0,
            positives_per_user,
            alpha: 1.0,
            seed: 0,
            replicate: 0,
        };
        Ok(Self {
            config,
            truth: FactorModel::zeros(1, n_users, n_items),
            scores,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn n_users(&self) -> usize {
        self.config.n_users
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn positives_per_user(&self) -> usize {
        self.config.positives_per_user
    }

    /// The ground-truth factors (all zero for worlds built from raw scores).
    pub fn truth(&self) -> &FactorModel {
        &self.truth
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn row(&self, user: usize) -> &[f64] {
        let m = self.n_items();
        &self.scores[user * m..(user + 1) * m]
    }

    /// Realises a structure with exponential rates `φ(X*)`. `draw` selects an
    /// independent stream; each user samples from its own sub-stream.
    pub fn sample(&self, draw: u64) -> PreferenceDraw {
        self.sample_with(draw, phi)
    }

    /// Like [`sample`](Self::sample) with rates `rate(X*)`.
    pub fn sample_with(&self, draw: u64, rate: impl Fn(f64) -> f64 + Sync) -> PreferenceDraw {
        let positives = par::map_range(self.n_users(), |u| {
            let mut r = self.user_stream(draw, u);
            let rates: Vec<f64> = self.row(u).iter().map(|&x| rate(x)).collect();
            race_winners(&rates, self.positives_per_user(), &mut r)
        });
        PreferenceDraw { positives }
    }

    fn user_stream(&self, draw: u64, user: usize) -> StreamRng {
        rng::stream(
            self.config.seed,
            &[rng::DOMAIN_DRAW, self.config.replicate, draw, user as u64],
        )
    }
}

/// Arrival time of an exponential clock with the given rate, by inverse CDF.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    -rng::open_unit(rng).ln() / rate
}

/// Draws `Y_l ~ Exp(rates[l])` and returns the `j` earliest arrivals, sorted by index.
pub fn race_winners<R: Rng + ?Sized>(rates: &[f64], j: usize, rng: &mut R) -> Vec<usize> {
    let mut times: Vec<(f64, usize)> = rates
        .iter()
        .enumerate()
        .map(|(l, &r)| (exponential(r, rng), l))
        .collect();
    let j = j.min(times.len());
    if j == 0 {
        return Vec::new();
    }
    if j < times.len() {
        times.select_nth_unstable_by(j - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let mut out: Vec<usize> = times[..j].iter().map(|&(_, l)| l).collect();
    out.sort_unstable();
    out
}

/// Monte-Carlo check of one setwise likelihood factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorCheck {
    /// Fraction of races in which item `j` beats every item of `O`.
    pub estimate: f64,
    /// `φ(x_j) / (φ(x_j) + Σ_{k∈O} φ(x_k))`.
    pub analytic: f64,
    /// `(estimate - analytic) / SE` with the binomial standard error at `analytic`.
    pub z: f64,
}

/// Estimates `P(Y_j <= min_{k∈O} Y_k)` by racing independent exponential
/// clocks with rates `φ(row)`, and compares with the closed form.
pub fn mc_check_setwise_factor<R: Rng + ?Sized>(
    row: &[f64],
    j: usize,
    others: &[usize],
    n_samples: usize,
    rng: &mut R,
) -> Result<FactorCheck> {
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10^4 samples, got {n_samples}"
        )));
    }
    let bound = row.len();
    if let Some(&l) = std::iter::once(&j).chain(others).find(|&&l| l >= bound) {
        return Err(Error::OutOfRange {
            what: "item",
            index: l,
            bound,
        });
    }
    if others.contains(&j) {
        return Err(Error::InvalidArgument("j must not be in O".into()));
    }
    let fj = phi(row[j]);
    let rates: Vec<f64> = others.iter().map(|&k| phi(row[k])).collect();
    let total = rates.iter().copied().collect::<CompensatedSum>().value();
    let analytic = fj / (fj + total);
    if others.is_empty() {
        return Ok(FactorCheck {
            estimate: 1.0,
            analytic: 1.0,
            z: 0.0,
        });
    }

    let mut wins = 0usize;
    for _ in 0..n_samples {
        let yj = exponential(fj, rng);
        if rates.iter().all(|&r| yj <= exponential(r, rng)) {
            wins += 1;
        }
    }
    let estimate = wins as f64 / n_samples as f64;
    let se = (analytic * (1.0 - analytic) / n_samples as f64).sqrt();
    Ok(FactorCheck {
        estimate,
        analytic,
        z: (estimate - analytic) / se,
    })
}

/// KL divergence between the top-1 distributions induced by `truth` and
/// `fitted` over the list `{j} ∪ O`, for every `j` in `positives`, where `O`
/// is the complement of `positives`. Returns the sum over `j`.
fn user_kl(truth: &[f64], fitted: &[f64], positives: &[usize]) -> f64 {
    // shared sums over O:
    //   a = Σ φ*_k,  b = Σ φ̂_k,  c = Σ φ*_k (ln φ*_k - ln φ̂_k)
    let (mut a, mut b, mut c) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    let mut p = positives.iter().peekable();
    for l in 0..truth.len() {
        if p.peek() == Some(&&l) {
            p.next();
            continue;
        }
        let (lt, lf) = (log_phi(truth[l]), log_phi(fitted[l]));
        let ft = lt.exp();
        a.add(ft);
        b.add(lf.exp());
        c.add(ft * (lt - lf));
    }
    let (a, b, c) = (a.value(), b.value(), c.value());
    positives
        .iter()
        .map(|&j| {
            let (lt, lf) = (log_phi(truth[j]), log_phi(fitted[j]));
            let ft = lt.exp();
            let zt = a + ft;
            let zf = b + lf.exp();
            // Σ_l p_l ln(p_l / q_l) with p = φ*/zt, q = φ̂/zf
            let kl = (c + ft * (lt - lf)) / zt - zt.ln() + zf.ln();
            kl.max(0.0)
        })
        .sum()
}

/// Excess risk `(1/N) Σ_i Σ_{j∈P_i} KL(C*_ij ‖ Ĉ_ij)` between row-major score
/// matrices, with `C_ij` the top-1 distribution over `{j} ∪ O_i`.
pub fn excess_risk(
    truth: &[f64],
    fitted: &[f64],
    n_items: usize,
    positives: &[Vec<usize>],
) -> Result<f64> {
    let n = positives.len();
    if n == 0 || truth.len() != n * n_items || fitted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} users, {} true and {} fitted scores for {n_items} items",
            n,
            truth.len(),
            fitted.len()
        )));
    }
    for p in positives {
        if p.windows(2).any(|w| w[0] >= w[1]) || p.last().is_some_and(|&l| l >= n_items) {
            return Err(Error::InvalidArgument(
                "positive sets must be sorted, distinct and in range".into(),
            ));
        }
    }
    let per_user = par::map_range(n, |i| {
        let r = i * n_items..(i + 1) * n_items;
        user_kl(&truth[r.clone()], &fitted[r], &positives[i])
    });
    let d = per_user.into_iter().collect::<CompensatedSum>().value() / n as f64;
    if !d.is_finite() {
        return Err(Error::NonFinite {
            context: "excess risk".into(),
        });
    }
    Ok(d)
}

/// Draw used as the fixed reference structure for measuring excess risk.
const REFERENCE_DRAW: u64 = 0;
/// Draw the model is trained on.
const TRAINING_DRAW: u64 = 1;

/// Fits MF-SetRank to one training draw of `world` (all positives used for
/// training, no model selection) and measures the excess risk against the
/// world's reference draw.
pub fn fit_and_measure(world: &SyntheticWorld, fit: &TrainConfig) -> Result<f64> {
    let data = world.sample(TRAINING_DRAW).to_dataset(world.n_items())?;
    let outcome = train(&data, fit)?;
    if let Some(e) = outcome.diverged {
        return Err(e);
    }
    let reference = world.sample(REFERENCE_DRAW);
    excess_risk(
        world.scores(),
        &outcome.model.score_matrix(),
        world.n_items(),
        &reference.positives,
    )
}

/// An excess-risk scaling experiment over user counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub user_counts: Vec<usize>,
    pub n_items: usize,
    pub rank: usize,
    pub positives_per_user: usize,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Training settings; `rank` is overridden with the world's rank.
    pub fit: TrainConfig,
}

impl SweepConfig {
    /// Defaults for the `M = 100, r = 5, J = 5` experiment.
    pub fn standard(user_counts: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            user_counts,
            n_items: 100,
            rank: 5,
            positives_per_user: 5,
            alpha: 1.0,
            replicates,
            seed,
            fit: TrainConfig {
                rank: 5,
                lambda: 1.0,
                gamma: 0.05,
                decay: 0.998,
                tau: 3,
                epochs: 600,
                seed,
                init_std: 0.1,
                deterministic: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub replicate: usize,
    pub excess_risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n_users: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// TSV with columns N, M, r, replicate, D.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("N\tM\tr\treplicate\tD\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.10e}",
                r.n_users, r.n_items, r.rank, r.replicate, r.excess_risk
            );
        }
        s
    }

    /// Mean and sample standard deviation of D per user count, in sweep order.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut counts: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !counts.contains(&r.n_users) {
                counts.push(r.n_users);
            }
        }
        counts
            .into_iter()
            .map(|n| {
                let d: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.n_users == n)
                    .map(|r| r.excess_risk)
                    .collect();
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                let var = if d.len() > 1 {
                    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64
                } else {
                    0.0
                };
                SweepSummary {
                    n_users: n,
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }

    /// Least-squares slope of ln(mean D) against ln N.
    pub fn log_log_slope(&self) -> Option<f64> {
        let s = self.summary();
        if s.len() < 2 || s.iter().any(|r| !(r.mean > 0.0)) {
            return None;
        }
        let xs: Vec<f64> = s.iter().map(|r| (r.n_users as f64).ln()).collect();
        let ys: Vec<f64> = s.iter().map(|r| r.mean.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Runs `fit_and_measure` for every user count and replicate. Replicate `k`
/// uses world stream `(seed, k)` for all user counts, so larger worlds extend
/// smaller ones.
pub fn scaling_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    if cfg.user_counts.is_empty() || cfg.replicates == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs at least one user count and one replicate".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in &cfg.user_counts {
        for k in 0..cfg.replicates {
            let world = SyntheticWorld::generate(WorldConfig {
                n_users: n,
                n_items: cfg.n_items,
                rank: cfg.rank,
                positives_per_user: cfg.positives_per_user,
                alpha: cfg.alpha,
                seed: cfg.seed,
                replicate: k as u64,
            })?;
            let fit = TrainConfig {
                rank: cfg.rank,
                seed: cfg.fit.seed.wrapping_add(k as u64),
                ..cfg.fit.clone()
            };
            let d = fit_and_measure(&world, &fit)?;
            log::info!("N = {n} replicate {k}: D = {d:.6}");
            rows.push(SweepRow {
                n_users: n,
                n_items: cfg.n_items,
                rank: cfg.rank,
                replicate: k,
                excess_risk: d,
            });
        }
    }
    Ok(SweepTable { rows })
}

/// A ranking-recovery task: positives drawn from a low-rank world by a
/// Plackett-Luce race with rates `exp(sharpness · X*)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub positives_per_user: usize,
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 200,
            rank: 5,
            positives_per_user: 20,
            sharpness: 1.5,
            seed: 7,
        }
    }
}

/// The unsplit dataset of a recovery task, plus the world behind it.
pub fn recovery_dataset(cfg: &RecoveryConfig) -> Result<(ImplicitDataset, SyntheticWorld)> {
    let world = SyntheticWorld::generate(WorldConfig {
        n_users: cfg.n_users,
        n_items: cfg.n_items,
        rank: cfg.rank,
        positives_per_user: cfg.positives_per_user,
        alpha: 1.0,
        seed: cfg.seed,
        replicate: 0,
    })?;
    let sharp = cfg.sharpness;
    let draw = world.sample_with(TRAINING_DRAW, |x| (sharp * x).exp());
    Ok((draw.to_dataset(cfg.n_items)?, world))
}
