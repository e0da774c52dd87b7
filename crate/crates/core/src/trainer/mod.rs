//! MF-SetRank training: full-batch gradient descent with a decaying step,
//! fresh negatives every epoch and validation-based checkpoint selection.

mod bench;
mod gradients;
mod sampling;

use std::fmt::Write as _;

use crate::data_io::{ImplicitDataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Target};
use crate::model::{FactorModel, TrainConfig};

pub use bench::{bench_grad, synthetic_gradient_problem, BenchReport, GradientProblem};
pub use gradients::{
    fast_gradients, fast_gradients_from_lists, naive_gradients, naive_gradients_from_lists,
    GradientBuffers, Reduction,
};
pub use sampling::{sample_negatives, sample_unobserved, EpochPlan};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective at the start of the epoch, over that epoch's negatives.
    pub objective: f64,
    /// Validation P@5 after the epoch's update; `None` without a validation split.
    pub val_p5: Option<f64>,
    /// Step size used for the epoch's update.
    pub gamma: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 means the initialisation.
    pub best_epoch: usize,
}

impl TrainLog {
    /// Validation P@5 of the returned checkpoint, if it was scored.
    pub fn best_val_p5(&self) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .and_then(|r| r.val_p5)
    }

    /// TSV with columns epoch, objective, val_p5, gamma.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tobjective\tval_p5\tgamma\n");
        for r in &self.records {
            let val = r.val_p5.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{}\t{:.10e}\t{val}\t{:.10e}", r.epoch, r.objective, r.gamma);
        }
        s
    }
}

/// Result of a training run. When `diverged` is set, `model` is the last
/// good checkpoint.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: FactorModel,
    pub log: TrainLog,
    pub diverged: Option<Error>,
}

/// Validation P@5, or `None` if the dataset has no validation positives.
pub(crate) fn validation_p5(model: &FactorModel, ds: &ImplicitDataset) -> Result<Option<f64>> {
    if !ds.has_split(Split::Validation) {
        return Ok(None);
    }
    let r = evaluate(model, ds, &[5], Target::Validation, false)?;
    Ok(Some(r.precision[0]))
}

/// Keeps the checkpoint with the best validation P@5; later epochs win ties.
/// Without validation data the latest checkpoint is kept.
#[derive(Debug)]
pub(crate) struct CheckpointSelector {
    best: FactorModel,
    best_score: Option<f64>,
    best_epoch: usize,
}

impl CheckpointSelector {
    pub fn new(initial: FactorModel) -> Self {
        Self {
            best: initial,
            best_score: None,
            best_epoch: 0,
        }
    }

    pub fn offer(&mut self, epoch: usize, model: &FactorModel, score: Option<f64>) {
        let better = match (score, self.best_score) {
            (Some(s), Some(b)) => s >= b,
            _ => true,
        };
        if better {
            self.best = model.clone();
            self.best_score = score;
            self.best_epoch = epoch;
        }
    }

    pub fn finish(self) -> (FactorModel, usize) {
        (self.best, self.best_epoch)
    }
}

/// Gradient-descent state over one dataset.
#[derive(Debug)]
pub struct Trainer<'a> {
    ds: &'a ImplicitDataset,
    train: Vec<Vec<usize>>,
    cfg: TrainConfig,
    model: FactorModel,
    gamma: f64,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a ImplicitDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = FactorModel::init(ds.n_users(), ds.n_items(), cfg)?;
        Self::with_model(ds, cfg, model)
    }

    pub fn with_model(ds: &'a ImplicitDataset, cfg: &TrainConfig, model: FactorModel) -> Result<Self> {
        cfg.validate()?;
        model.check_dims(ds)?;
        if model.rank() != cfg.rank {
            return Err(Error::DimensionMismatch(format!(
                "model rank {} but config rank {}",
                model.rank(),
                cfg.rank
            )));
        }
        Ok(Self {
            ds,
            train: ds.split_lists(Split::Train),
            cfg: cfg.clone(),
            model,
            gamma: cfg.gamma,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn into_model(self) -> FactorModel {
        self.model
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Negatives for the next epoch.
    pub fn sample_plan(&self) -> EpochPlan {
        EpochPlan::sample(self.ds, self.cfg.tau, self.cfg.seed, self.epoch + 1)
    }

    fn reduction(&self) -> Reduction {
        if self.cfg.deterministic {
            Reduction::Ordered
        } else {
            Reduction::Unordered
        }
    }

    /// One epoch with the given negatives: both factor blocks step along
    /// their gradients at the current point, then the step size decays.
    /// Returns the objective before the update.
    pub fn step(&mut self, plan: &EpochPlan) -> Result<f64> {
        let grads = fast_gradients_from_lists(
            &self.model,
            &self.train,
            &plan.negatives,
            self.cfg.lambda,
            self.reduction(),
        )?;
        let objective = grads.objective(&self.model, self.cfg.lambda);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch + 1,
                reason: "objective is not finite".into(),
            });
        }
        let mut next = self.model.clone();
        next.users_mut().sub_scaled(self.gamma, &grads.grad_users);
        next.items_mut().sub_scaled(self.gamma, &grads.grad_items);
        if !next.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch + 1,
                reason: "parameters became non-finite".into(),
            });
        }
        self.model = next;
        self.gamma *= self.cfg.decay;
        self.epoch += 1;
        Ok(objective)
    }
}

/// Trains MF-SetRank for `cfg.epochs` epochs and returns the best checkpoint.
pub fn train(ds: &ImplicitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(ds, cfg)?;
    let mut log = TrainLog::default();
    let mut selector = CheckpointSelector::new(trainer.model().clone());
    let mut diverged = None;

    for _ in 0..cfg.epochs {
        let plan = trainer.sample_plan();
        let gamma = trainer.gamma();
        let objective = match trainer.step(&plan) {
            Ok(o) => o,
            Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                log::warn!("stopping early: {e}");
                diverged = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let val_p5 = validation_p5(trainer.model(), ds)?;
        log::debug!(
            "epoch {} objective {objective:.6} val_p5 {val_p5:?}",
            trainer.epoch()
        );
        selector.offer(trainer.epoch(), trainer.model(), val_p5);
        log.records.push(EpochRecord {
            epoch: trainer.epoch(),
            objective,
            val_p5,
            gamma,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{split, SplitConfig};

    fn toy(n: usize, m: usize, per_user: usize, seed: u64) -> ImplicitDataset {
        let mut r = crate::rng::stream(seed, &[1]);
        let lists = (0..n)
            .map(|_| {
                let mut l = rand::seq::index::sample(&mut r, m, per_user).into_vec();
                l.sort_unstable();
                l
            })
            .collect();
        ImplicitDataset::from_train_lists(lists, m).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            rank: 4,
            lambda: 0.1,
            gamma: 0.05,
            decay: 1.0,
            tau: 3,
            epochs: 10,
            seed: 5,
            init_std: 0.1,
            deterministic: true,
        }
    }

    #[test]
    fn objective_decreases_on_fixed_plan() {
        let ds = toy(20, 30, 4, 0);
        let mut t = Trainer::new(&ds, &cfg()).unwrap();
        let plan = t.sample_plan();
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let o = t.step(&plan).unwrap();
            assert!(o < last, "{o} !< {last}");
            last = o;
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let ds = toy(5, 8, 2, 1);
        let c = TrainConfig { epochs: 0, ..cfg() };
        let out = train(&ds, &c).unwrap();
        assert_eq!(out.model, FactorModel::init(5, 8, &c).unwrap());
        assert!(out.log.records.is_empty());
        assert_eq!(out.log.best_epoch, 0);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = split(&toy(30, 40, 8, 2), &SplitConfig::default()).unwrap();
        let a = train(&ds, &cfg()).unwrap();
        let b = train(&ds, &cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.records.len(), 10);
        assert!(a.log.records.iter().all(|r| r.val_p5.is_some()));
        assert!((a.log.records[0].gamma - 0.05).abs() < 1e-15);
    }

    #[test]
    fn pure_weight_decay_shrinks_norms() {
        let ds = ImplicitDataset::from_train_lists(vec![vec![]; 4], 6).unwrap();
        let c = TrainConfig {
            init_std: 1.0,
            lambda: 0.5,
            gamma: 0.1,
            ..cfg()
        };
        let mut t = Trainer::new(&ds, &c).unwrap();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for _ in 0..20 {
            let plan = t.sample_plan();
            t.step(&plan).unwrap();
            let now = (t.model().users().squared_norm(), t.model().items().squared_norm());
            assert!(now.0 < last.0 && now.1 < last.1);
            last = now;
        }
    }

    #[test]
    fn divergence_returns_checkpoint() {
        let ds = toy(10, 12, 3, 3);
        let c = TrainConfig {
            gamma: 1e200,
            init_std: 1.0,
            epochs: 5,
            ..cfg()
        };
        let out = train(&ds, &c).unwrap();
        assert!(out.diverged.is_some());
        assert!(out.model.is_finite());
    }

    #[test]
    fn log_tsv_shape() {
        let ds = toy(6, 10, 2, 4);
        let out = train(&ds, &TrainConfig { epochs: 3, ..cfg() }).unwrap();
        let tsv = out.log.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "epoch\tobjective\tval_p5\tgamma");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("NaN"));
        assert_eq!(out.log.best_epoch, 3);
    }
}
