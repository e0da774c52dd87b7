//! Pairwise BPR baseline over the same factor model.
//!
//! Per sample `(i, j, k)` with `d = X_ij - X_ik` the loss is
//! `-ln σ(d) + λ/2 (‖u_i‖² + ‖v_j‖² + ‖v_k‖²)`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_io::{ImplicitDataset, Split};
use crate::error::{Error, Result};
use crate::model::{dot, FactorModel, TrainConfig};
use crate::rng;
use crate::setwise::sigmoid;
use crate::trainer::{validation_p5, CheckpointSelector, EpochRecord, TrainLog, TrainOutcome};

/// A user, one of their training positives and an item they never interacted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `ln(1 + e^{-d}) = -ln σ(d)`, stable for large `|d|`.
fn neg_log_sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

fn check_sample(model: &FactorModel, s: &PairSample) -> Result<()> {
    if s.positive == s.negative {
        return Err(Error::InvalidArgument("positive and negative item coincide".into()));
    }
    model.score(s.user, s.positive)?;
    model.score(s.user, s.negative)?;
    Ok(())
}

pub fn bpr_loss(model: &FactorModel, s: &PairSample, lambda: f64) -> Result<f64> {
    check_sample(model, s)?;
    let u = model.users().col(s.user);
    let vj = model.items().col(s.positive);
    let vk = model.items().col(s.negative);
    let d = dot(u, vj) - dot(u, vk);
    let reg = dot(u, u) + dot(vj, vj) + dot(vk, vk);
    Ok(neg_log_sigmoid(d) + 0.5 * lambda * reg)
}

/// Gradients of [`bpr_loss`] with respect to `(u_i, v_j, v_k)`.
pub fn bpr_gradients(
    model: &FactorModel,
    s: &PairSample,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_sample(model, s)?;
    let u = model.users().col(s.user);
    let vj = model.items().col(s.positive);
    let vk = model.items().col(s.negative);
    let d = dot(u, vj) - dot(u, vk);
    // d/dd of -ln σ(d) is -σ(-d)
    let w = sigmoid(-d);
    let gu = (0..u.len()).map(|f| -w * (vj[f] - vk[f]) + lambda * u[f]).collect();
    let gj = (0..u.len()).map(|f| -w * u[f] + lambda * vj[f]).collect();
    let gk = (0..u.len()).map(|f| w * u[f] + lambda * vk[f]).collect();
    Ok((gu, gj, gk))
}

/// One SGD step on `u_i`, `v_j` and `v_k`, all from their pre-step values.
pub fn bpr_sgd_step(model: &mut FactorModel, s: &PairSample, lr: f64, lambda: f64) -> Result<()> {
    let (gu, gj, gk) = bpr_gradients(model, s, lambda)?;
    for (x, g) in model.users_mut().col_mut(s.user).iter_mut().zip(&gu) {
        *x -= lr * g;
    }
    for (x, g) in model.items_mut().col_mut(s.positive).iter_mut().zip(&gj) {
        *x -= lr * g;
    }
    for (x, g) in model.items_mut().col_mut(s.negative).iter_mut().zip(&gk) {
        *x -= lr * g;
    }
    Ok(())
}

/// Uniform item not positive for `user` in any split, by rejection.
fn draw_negative<R: Rng + ?Sized>(ds: &ImplicitDataset, user: usize, rng: &mut R) -> Option<usize> {
    if ds.n_unobserved(user) == 0 {
        return None;
    }
    loop {
        let k = rng.random_range(0..ds.n_items());
        if !ds.user(user).contains(k) {
            return Some(k);
        }
    }
}

/// Plain BPR-SGD: every epoch visits each training positive once in a
/// shuffled order, pairs it with one uniform negative and takes a step with
/// the fixed learning rate `cfg.gamma`. `cfg.tau` and `cfg.decay` are unused.
pub fn train_bpr(ds: &ImplicitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = FactorModel::init(ds.n_users(), ds.n_items(), cfg)?;
    let mut pairs: Vec<(usize, usize)> = (0..ds.n_users())
        .flat_map(|u| ds.user(u).with_split(Split::Train).map(move |j| (u, j)))
        .collect();
    let mut selector = CheckpointSelector::new(model.clone());
    let mut log = TrainLog::default();
    let mut diverged = None;

    for epoch in 1..=cfg.epochs {
        let mut r = rng::stream(cfg.seed, &[rng::DOMAIN_BPR, epoch as u64]);
        pairs.shuffle(&mut r);
        let mut loss = 0.0;
        for &(user, positive) in &pairs {
            let Some(negative) = draw_negative(ds, user, &mut r) else {
                continue;
            };
            let s = PairSample {
                user,
                positive,
                negative,
            };
            loss += bpr_loss(&model, &s, cfg.lambda)?;
            bpr_sgd_step(&mut model, &s, cfg.gamma, cfg.lambda)?;
        }
        if !loss.is_finite() || !model.is_finite() {
            diverged = Some(Error::Diverged {
                epoch,
                reason: "BPR loss or parameters became non-finite".into(),
            });
            break;
        }
        let val_p5 = validation_p5(&model, ds)?;
        selector.offer(epoch, &model, val_p5);
        log.records.push(EpochRecord {
            epoch,
            objective: loss,
            val_p5,
            gamma: cfg.gamma,
        });
    }
    let (model, best_epoch) = selector.finish();
    log.best_epoch = best_epoch;
    Ok(TrainOutcome {
        model,
        log,
        diverged,
    })
}
