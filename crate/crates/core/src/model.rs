//! Rank-r latent factors, scoring and persistence.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::data_io::ImplicitDataset;
use crate::error::{Error, Result};
use crate::rng;

const MODEL_MAGIC: [u8; 4] = *b"SRMF";
const MODEL_VERSION: u32 = 1;
const DTYPE_WIDTH: u32 = 8;

/// An `r × n` matrix stored column by column, so each user or item vector is
/// a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rank: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rank: usize, cols: usize) -> Self {
        Self {
            rank,
            cols,
            data: vec![0.0; rank * cols],
        }
    }

    pub fn from_columns(rank: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rank * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rank}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rank, cols, data })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    #[inline]
    pub fn col_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `self -= step * other`, elementwise.
    pub fn sub_scaled(&mut self, step: f64, other: &FactorMatrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= step * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Hyperparameters for training either factor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub lambda: f64,
    /// Initial step size.
    pub gamma: f64,
    /// Multiplicative step decay applied once per epoch.
    pub decay: f64,
    /// Sampled negatives per training positive.
    pub tau: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_std: f64,
    /// Fixed reduction order in parallel sections (bit-reproducible).
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rank: 100,
            lambda: 0.7,
            gamma: 0.5,
            decay: 0.95,
            tau: 3,
            epochs: 200,
            seed: 42,
            init_std: 0.1,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.gamma));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must be in (0, 1], got {}", self.decay));
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return bad(format!("init_std must be finite and >= 0, got {}", self.init_std));
        }
        Ok(())
    }
}

/// User factors `U` (one column per user) and item factors `V` (one column
/// per item). Scores are `X = UᵀV`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    users: FactorMatrix,
    items: FactorMatrix,
}

impl FactorModel {
    pub fn from_factors(users: FactorMatrix, items: FactorMatrix) -> Result<Self> {
        if users.rank() != items.rank() {
            return Err(Error::DimensionMismatch(format!(
                "user rank {} vs item rank {}",
                users.rank(),
                items.rank()
            )));
        }
        Ok(Self { users, items })
    }

    pub fn zeros(rank: usize, n_users: usize, n_items: usize) -> Self {
        Self {
            users: FactorMatrix::zeros(rank, n_users),
            items: FactorMatrix::zeros(rank, n_items),
        }
    }

    /// I.i.d. `N(0, init_std²)` entries, reproducible from `cfg.seed`.
    pub fn init(n_users: usize, n_items: usize, cfg: &TrainConfig) -> Result<Self> {
        if n_users == 0 || n_items == 0 || cfg.rank == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive (rank {}, users {n_users}, items {n_items})",
                cfg.rank
            )));
        }
        if !(cfg.init_std >= 0.0) || !cfg.init_std.is_finite() {
            return Err(Error::InvalidArgument(format!("bad init_std {}", cfg.init_std)));
        }
        let fill = |cols: usize, tag: u64| {
            let mut r = rng::stream(cfg.seed, &[rng::DOMAIN_INIT, tag]);
            let mut m = FactorMatrix::zeros(cfg.rank, cols);
            if cfg.init_std > 0.0 {
                for x in m.as_mut_slice() {
                    let z: f64 = r.sample(StandardNormal);
                    *x = z * cfg.init_std;
                }
            }
            m
        };
        Ok(Self {
            users: fill(n_users, 0),
            items: fill(n_items, 1),
        })
    }

    pub fn rank(&self) -> usize {
        self.users.rank()
    }

    pub fn n_users(&self) -> usize {
        self.users.cols()
    }

    pub fn n_items(&self) -> usize {
        self.items.cols()
    }

    pub fn users(&self) -> &FactorMatrix {
        &self.users
    }

    pub fn items(&self) -> &FactorMatrix {
        &self.items
    }

    pub fn users_mut(&mut self) -> &mut FactorMatrix {
        &mut self.users
    }

    pub fn items_mut(&mut self) -> &mut FactorMatrix {
        &mut self.items
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::OutOfRange {
                what: "user",
                index: user,
                bound: self.n_users(),
            });
        }
        Ok(())
    }

    /// `X[user, item] = u_userᵀ v_item`.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        self.check_user(user)?;
        if item >= self.n_items() {
            return Err(Error::OutOfRange {
                what: "item",
                index: item,
                bound: self.n_items(),
            });
        }
        Ok(dot(self.users.col(user), self.items.col(item)))
    }

    /// Scores of every item for `user`.
    pub fn score_user(&self, user: usize) -> Result<Vec<f64>> {
        self.check_user(user)?;
        let u = self.users.col(user);
        Ok((0..self.n_items())
            .map(|l| dot(u, self.items.col(l)))
            .collect())
    }

    /// Dense `N × M` score matrix, row-major.
    pub fn score_matrix(&self) -> Vec<f64> {
        let rows = crate::par::map_range(self.n_users(), |i| {
            self.score_user(i).expect("user index in range")
        });
        rows.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }

    /// Errors unless the model has one column per dataset user and item.
    pub fn check_dims(&self, ds: &ImplicitDataset) -> Result<()> {
        if self.n_users() != ds.n_users() || self.n_items() != ds.n_items() {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{} (users x items) but dataset is {}x{}",
                self.n_users(),
                self.n_items(),
                ds.n_users(),
                ds.n_items()
            )));
        }
        Ok(())
    }

    /// Binary encoding: magic, version, r, N, M, dtype width, then `U` and
    /// `V` as row-major `r × N` and `r × M` little-endian `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(&MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.len_u32(self.rank(), "rank")?;
        w.len_u32(self.n_users(), "user count")?;
        w.len_u32(self.n_items(), "item count")?;
        w.u32(DTYPE_WIDTH);
        for m in [&self.users, &self.items] {
            for k in 0..m.rank() {
                for c in 0..m.cols() {
                    w.f64(m.col(c)[k]);
                }
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32("version")?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let rank = r.u32("rank")? as usize;
        let n_users = r.u32("user count")? as usize;
        let n_items = r.u32("item count")? as usize;
        let width = r.u32("dtype width")?;
        if width != DTYPE_WIDTH {
            return Err(Error::Corrupt(format!("unsupported float width {width}")));
        }
        let expected = rank
            .checked_mul(n_users + n_items)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corrupt("dimensions overflow".into()))?;
        if bytes.len() - 24 < expected {
            return Err(Error::Truncated { what: "factor values" });
        }
        let mut read = |cols: usize| -> Result<FactorMatrix> {
            let mut m = FactorMatrix::zeros(rank, cols);
            for k in 0..rank {
                for c in 0..cols {
                    m.col_mut(c)[k] = r.f64("factor values")?;
                }
            }
            Ok(m)
        };
        let users = read(n_users)?;
        let items = read(n_items)?;
        r.finish()?;
        Self::from_factors(users, items)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a model and checks it matches `ds`.
    pub fn load_for(path: &Path, ds: &ImplicitDataset) -> Result<Self> {
        let m = Self::load(path)?;
        m.check_dims(ds)?;
        Ok(m)
    }
}
