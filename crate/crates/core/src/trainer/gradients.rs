//! Gradients of the setwise objective with respect to `U` and `V`.
//!
//! The fast path shares one pass over each user's positives and sampled
//! negatives: with `g = σ(x)`, `φ = e^g` and `σ' = g(1-g)`,
//!
//! ```text
//! sum      = Σ_{k ∈ neg} φ_k
//! s_j      = sum + φ_j                        j ∈ pos
//! totalsum = Σ_j 1 / s_j
//! c_j      = -σ'_j + φ_j σ'_j / s_j
//! c_k      = φ_k σ'_k · totalsum
//! ```
//!
//! and every touched column gets `c_l · u_i` (items) or `c_l · v_l` (the
//! user), for `O((J + K̃) r)` work per user. The naive path recomputes the
//! denominator and every score for each (positive, negative) pair.

use crate::data_io::ImplicitDataset;
use crate::error::{Error, Result};
use crate::model::{axpy, dot, FactorMatrix, FactorModel};
use crate::par;
use crate::setwise::{sigmoid, CompensatedSum};

use super::EpochPlan;

/// How per-user item contributions are summed into the item gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Each item column sums its contributions in user order: bit-reproducible
    /// for any thread count, and identical to a sequential run.
    #[default]
    Ordered,
    /// Per-worker partial gradients merged in scheduling order.
    Unordered,
}

/// Gradients of the objective plus its data term at the same point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers {
    pub grad_users: FactorMatrix,
    pub grad_items: FactorMatrix,
    /// `Σ_i Σ_j -ln p(j > negatives)`, without the regulariser.
    pub data_loss: f64,
}

impl GradientBuffers {
    /// Objective value: data term plus `λ/2 (‖U‖² + ‖V‖²)`.
    pub fn objective(&self, model: &FactorModel, lambda: f64) -> f64 {
        self.data_loss
            + 0.5 * lambda * (model.users().squared_norm() + model.items().squared_norm())
    }
}

/// One user's contribution: coefficients `c_l` for each touched item.
#[derive(Debug, Clone, Default)]
pub(crate) struct UserTerms {
    pub items: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// `Σ_l c_l v_l`, the data part of this user's gradient column.
    pub grad_user: Vec<f64>,
    pub loss: f64,
}

fn check_inputs(
    model: &FactorModel,
    positives: &[Vec<usize>],
    negatives: &[Vec<usize>],
    lambda: f64,
) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if positives.len() != model.n_users() || negatives.len() != model.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} users in the model, {} positive lists, {} negative lists",
            model.n_users(),
            positives.len(),
            negatives.len()
        )));
    }
    let m = model.n_items();
    for (u, (p, n)) in positives.iter().zip(negatives).enumerate() {
        if let Some(&l) = p.iter().chain(n).find(|&&l| l >= m) {
            return Err(Error::OutOfRange {
                what: "item",
                index: l,
                bound: m,
            });
        }
        if p.iter().any(|j| n.contains(j)) {
            return Err(Error::InvalidArgument(format!(
                "user {u}: an item is both positive and negative"
            )));
        }
    }
    Ok(())
}

fn non_finite(user: usize) -> Error {
    Error::NonFinite {
        context: format!("gradient of user {user}"),
    }
}

pub(crate) fn user_terms(
    model: &FactorModel,
    user: usize,
    positives: &[usize],
    negatives: &[usize],
) -> Result<UserTerms> {
    let rank = model.rank();
    let mut out = UserTerms {
        grad_user: vec![0.0; rank],
        ..UserTerms::default()
    };
    // an empty comparison set makes every likelihood factor exactly 1
    if positives.is_empty() || negatives.is_empty() {
        return Ok(out);
    }
    let u = model.users().col(user);
    let v = model.items();
    let n = positives.len() + negatives.len();
    out.items.reserve(n);
    out.coeffs.reserve(n);

    // (φ, σ') per negative
    let neg: Vec<(f64, f64)> = negatives
        .iter()
        .map(|&k| {
            let g = sigmoid(dot(u, v.col(k)));
            (g.exp(), g * (1.0 - g))
        })
        .collect();
    let sum = neg.iter().map(|&(f, _)| f).collect::<CompensatedSum>().value();

    let mut totalsum = CompensatedSum::new();
    let mut loss = CompensatedSum::new();
    for &j in positives {
        let g = sigmoid(dot(u, v.col(j)));
        let f = g.exp();
        let sp = g * (1.0 - g);
        let s = sum + f;
        totalsum.add(1.0 / s);
        loss.add(s.ln() - g);
        out.items.push(j);
        out.coeffs.push(-sp + f * sp / s);
    }
    let totalsum = totalsum.value();
    for (&k, &(f, sp)) in negatives.iter().zip(&neg) {
        out.items.push(k);
        out.coeffs.push(f * sp * totalsum);
    }
    out.loss = loss.value();

    for (&l, &c) in out.items.iter().zip(&out.coeffs) {
        axpy(c, v.col(l), &mut out.grad_user);
    }
    if !out.loss.is_finite()
        || !out.coeffs.iter().all(|c| c.is_finite())
        || !out.grad_user.iter().all(|c| c.is_finite())
    {
        return Err(non_finite(user));
    }
    Ok(out)
}

/// Fast gradients from per-user train positives and sampled negatives.
pub fn fast_gradients_from_lists(
    model: &FactorModel,
    positives: &[Vec<usize>],
    negatives: &[Vec<usize>],
    lambda: f64,
    reduction: Reduction,
) -> Result<GradientBuffers> {
    check_inputs(model, positives, negatives, lambda)?;
    let rank = model.rank();
    let n_items = model.n_items();

    let terms = par::map_range(model.n_users(), |i| {
        user_terms(model, i, &positives[i], &negatives[i])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut grad_users = model.users().clone();
    par::for_each_chunk_mut(grad_users.as_mut_slice(), rank, |i, col| {
        for (g, t) in col.iter_mut().zip(&terms[i].grad_user) {
            *g = lambda * *g + t;
        }
    });

    let users = model.users();
    let mut grad_items = model.items().clone();
    match reduction {
        Reduction::Ordered => {
            // bucket (user, coefficient) pairs by item, users in ascending order
            let mut offsets = vec![0usize; n_items + 1];
            for t in &terms {
                for &l in &t.items {
                    offsets[l + 1] += 1;
                }
            }
            for l in 0..n_items {
                offsets[l + 1] += offsets[l];
            }
            let mut fill = offsets.clone();
            let mut entries = vec![(0usize, 0.0f64); offsets[n_items]];
            for (i, t) in terms.iter().enumerate() {
                for (&l, &c) in t.items.iter().zip(&t.coeffs) {
                    entries[fill[l]] = (i, c);
                    fill[l] += 1;
                }
            }
            par::for_each_chunk_mut(grad_items.as_mut_slice(), rank, |l, col| {
                col.iter_mut().for_each(|g| *g *= lambda);
                for &(i, c) in &entries[offsets[l]..offsets[l + 1]] {
                    axpy(c, users.col(i), col);
                }
            });
        }
        Reduction::Unordered => {
            let data = par::fold_range(
                terms.len(),
                || vec![0.0; rank * n_items],
                |mut acc, i| {
                    let u = users.col(i);
                    for (&l, &c) in terms[i].items.iter().zip(&terms[i].coeffs) {
                        axpy(c, u, &mut acc[l * rank..(l + 1) * rank]);
                    }
                    acc
                },
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
            for (g, d) in grad_items.as_mut_slice().iter_mut().zip(&data) {
                *g = lambda * *g + d;
            }
        }
    }

    let data_loss = terms.iter().map(|t| t.loss).collect::<CompensatedSum>().value();
    Ok(GradientBuffers {
        grad_users,
        grad_items,
        data_loss,
    })
}

/// Fast gradients over `ds`'s training positives and `plan`'s negatives.
pub fn fast_gradients(
    model: &FactorModel,
    ds: &ImplicitDataset,
    plan: &EpochPlan,
    lambda: f64,
) -> Result<GradientBuffers> {
    model.check_dims(ds)?;
    let train = ds.split_lists(crate::data_io::Split::Train);
    fast_gradients_from_lists(model, &train, &plan.negatives, lambda, Reduction::Ordered)
}

/// Pairwise reference computation, `O(J K̃ r)` per user.
pub fn naive_gradients_from_lists(
    model: &FactorModel,
    positives: &[Vec<usize>],
    negatives: &[Vec<usize>],
    lambda: f64,
) -> Result<GradientBuffers> {
    check_inputs(model, positives, negatives, lambda)?;
    let users = model.users();
    let items = model.items();
    let mut gu = users.clone();
    gu.as_mut_slice().iter_mut().for_each(|x| *x *= lambda);
    let mut gv = items.clone();
    gv.as_mut_slice().iter_mut().for_each(|x| *x *= lambda);
    let mut loss = 0.0;

    for (i, (pos, neg)) in positives.iter().zip(negatives).enumerate() {
        if neg.is_empty() {
            continue;
        }
        for &j in pos {
            let u = users.col(i).to_vec();
            let gj = sigmoid(dot(&u, items.col(j)));
            let fj = gj.exp();
            let mut s = fj;
            for &k in neg {
                s += sigmoid(dot(&u, items.col(k))).exp();
            }
            loss += s.ln() - gj;

            let cj = -gj * (1.0 - gj) + fj * gj * (1.0 - gj) / s;
            axpy(cj, &u, gv.col_mut(j));
            axpy(cj, items.col(j), gu.col_mut(i));
            for &k in neg {
                let gk = sigmoid(dot(&u, items.col(k)));
                let ck = gk.exp() * gk * (1.0 - gk) / s;
                axpy(ck, &u, gv.col_mut(k));
                axpy(ck, items.col(k), gu.col_mut(i));
            }
        }
        if !gu.col(i).iter().all(|x| x.is_finite()) {
            return Err(non_finite(i));
        }
    }
    Ok(GradientBuffers {
        grad_users: gu,
        grad_items: gv,
        data_loss: loss,
    })
}

/// Naive gradients over `ds`'s training positives and `plan`'s negatives.
pub fn naive_gradients(
    model: &FactorModel,
    ds: &ImplicitDataset,
    plan: &EpochPlan,
    lambda: f64,
) -> Result<GradientBuffers> {
    model.check_dims(ds)?;
    let train = ds.split_lists(crate::data_io::Split::Train);
    naive_gradients_from_lists(model, &train, &plan.negatives, lambda)
}
