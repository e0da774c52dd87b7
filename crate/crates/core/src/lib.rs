//! Setwise Bayesian collaborative ranking from implicit feedback.
//!
//! The crate trains matrix-factorisation rankers whose likelihood treats each
//! positive item as preferred over the user's whole unobserved set, compares
//! them with a BPR baseline under a shared top-P evaluation protocol, and
//! ships a generative simulator for checking the probability model and the
//! excess-risk behaviour of fitted models.
//!
//! Parallel sections run on rayon when the `parallel` feature is enabled (the
//! default) and sequentially otherwise; deterministic mode gives the same
//! bits either way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bpr;
pub mod cli;
mod codec;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod manifest;
pub mod model;
pub mod par;
pub mod rng;
pub mod setwise;

pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{FactorModel, TrainConfig};
