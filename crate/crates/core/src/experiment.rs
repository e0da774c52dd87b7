//! Model dispatch and one-parameter hyperparameter sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::bpr::train_bpr;
use crate::data_io::ImplicitDataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Target};
use crate::model::TrainConfig;
use crate::trainer::{train, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    SetRank,
    Bpr,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "setrank" => Ok(ModelKind::SetRank),
            "bpr" => Ok(ModelKind::Bpr),
            _ => Err(Error::InvalidArgument(format!("unknown model {s:?}"))),
        }
    }
}

pub fn fit(kind: ModelKind, ds: &ImplicitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match kind {
        ModelKind::SetRank => train(ds, cfg),
        ModelKind::Bpr => train_bpr(ds, cfg),
    }
}

/// Model picked from a hyperparameter grid by validation P@5.
#[derive(Debug)]
pub struct Selection {
    pub index: usize,
    pub val_p5: f64,
    pub outcome: TrainOutcome,
}

/// Trains one model per grid entry and keeps the one with the highest
/// validation P@5 (earliest entry on ties).
pub fn select_by_validation(
    kind: ModelKind,
    ds: &ImplicitDataset,
    grid: &[TrainConfig],
) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    for (index, cfg) in grid.iter().enumerate() {
        let outcome = fit(kind, ds, cfg)?;
        let val_p5 = outcome.log.best_val_p5().ok_or_else(|| {
            Error::InvalidArgument("grid selection needs a validation split".into())
        })?;
        if best.as_ref().is_none_or(|b| val_p5 > b.val_p5) {
            best = Some(Selection {
                index,
                val_p5,
                outcome,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty hyperparameter grid".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    Rank,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "r" | "rank" => Ok(SweepParam::Rank),
            _ => Err(Error::InvalidArgument(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: usize,
    /// Test P@5 of the selected checkpoint.
    pub p5: f64,
}

/// Trains one model per value of `param` (everything else from `base`) and
/// reports test P@5 for each.
pub fn hyper_sweep(
    kind: ModelKind,
    ds: &ImplicitDataset,
    base: &TrainConfig,
    param: SweepParam,
    values: &[usize],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Tau => cfg.tau = value,
                SweepParam::Rank => cfg.rank = value,
            }
            let out = fit(kind, ds, &cfg)?;
            if let Some(e) = out.diverged {
                return Err(e);
            }
            let report = evaluate(&out.model, ds, &[5], Target::Test, false)?;
            Ok(SweepPoint {
                value,
                p5: report.precision[0],
            })
        })
        .collect()
}

pub fn sweep_tsv(param: SweepParam, points: &[SweepPoint]) -> String {
    let name = match param {
        SweepParam::Tau => "tau",
        SweepParam::Rank => "r",
    };
    let mut s = format!("{name}\tp5\n");
    for p in points {
        let _ = writeln!(s, "{}\t{:.6}", p.value, p.p5);
    }
    s
}
