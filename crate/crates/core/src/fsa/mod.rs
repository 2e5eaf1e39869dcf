//! Feature Selection with Annealing: gradient steps interleaved with
//! hard-thresholding along a deterministic schedule, for linear models,
//! for tree responses, and for whole leaf-weight groups of a tree pool.

mod bank;
mod leaves;
mod linear;
mod trees;

pub use bank::LeafWeightBank;
pub use leaves::{
    fsa_multi_sparsity, fsa_on_leaves, leaf_objective_and_gradient, sparsity_snapshot_iterations,
    FsaOutcome, FsaTrace, LevelModel, MultiSparsityOutcome,
};
pub use linear::{fsa_linear, linear_objective_and_gradient, LinearFsa};
pub use trees::{fsa_on_trees, tree_responses, TreeWeights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsaParams {
    /// Target number of surviving coordinates (or trees).
    pub k: usize,
    pub n_iter: usize,
    /// Annealing speed of the schedule.
    pub mu: f64,
    /// Gradient step size.
    pub eta: f64,
    /// L2 shrinkage on all (leaf) weights.
    pub rho: f64,
    pub batch: BatchMode,
    /// Seed of the minibatch reshuffle; unused for full batches.
    pub seed: u64,
    /// Gradient steps on each frozen multi-sparsity snapshot; defaults to `n_iter`.
    pub refine_iter: Option<usize>,
    /// Keep the per-iteration active sets in the outcome.
    pub record_trace: bool,
}

impl Default for FsaParams {
    fn default() -> Self {
        Self {
            k: 10,
            n_iter: 300,
            mu: 10.0,
            eta: 1e-3,
            rho: 1e-3,
            batch: BatchMode::Full,
            seed: 0,
            refine_iter: None,
            record_trace: false,
        }
    }
}

impl FsaParams {
    /// Checks the parameters against a problem with `p` coordinates (or trees).
    /// `eta = 0` is accepted and freezes the weights.
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k < 1 || self.k > p {
            return Err(Error::param("k", format!("k={} must satisfy 1 <= k <= {p}", self.k)));
        }
        if self.n_iter < 1 {
            return Err(Error::param("n_iter", "must be >= 1"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", format!("{} must be > 0", self.mu)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::param("eta", format!("{} must be finite and >= 0", self.eta)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho", format!("{} must be finite and >= 0", self.rho)));
        }
        if let BatchMode::Minibatch { size: 0 } = self.batch {
            return Err(Error::param("batch", "minibatch size must be >= 1"));
        }
        Ok(())
    }

    pub fn refine_iterations(&self) -> usize {
        self.refine_iter.unwrap_or(self.n_iter)
    }
}

/// Number of coordinates kept after iteration `e`:
/// `floor(k + (p - k) * max(0, (n_iter - 2e) / (2 e mu + n_iter)))`.
pub fn schedule(e: usize, k: usize, p: usize, n_iter: usize, mu: f64) -> Result<usize> {
    if e < 1 || e > n_iter {
        return Err(Error::param("e", format!("iteration {e} outside 1..={n_iter}")));
    }
    if k < 1 || k > p {
        return Err(Error::param("k", format!("k={k} must satisfy 1 <= k <= p={p}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::param("mu", "must be > 0"));
    }
    let num = n_iter as f64 - 2.0 * e as f64;
    if num <= 0.0 {
        return Ok(k);
    }
    let den = 2.0 * e as f64 * mu + n_iter as f64;
    let extra = ((p - k) as f64 * num / den).floor() as usize;
    Ok((k + extra).min(p))
}

/// Tree selection score `||beta||_2 / n_leaves`.
pub fn group_score(beta: &[f64], n_leaves: usize) -> f64 {
    debug_assert!(n_leaves >= 1);
    beta.iter().map(|b| b * b).sum::<f64>().sqrt() / n_leaves as f64
}

/// The `keep` ids with the largest scores; ties go to the smaller id. The
/// result is in rank order.
pub(crate) fn rank_top(mut scored: Vec<(usize, f64)>, keep: usize) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(keep);
    scored.into_iter().map(|(id, _)| id).collect()
}

/// Tracks whether plain gradient steps keep raising the objective: after 10
/// consecutive increases the step size is halved once; a second trigger is
/// a divergence error.
#[derive(Debug, Clone)]
pub(crate) struct DivergenceGuard {
    pub eta: f64,
    streak: usize,
    halved: bool,
}

pub(crate) const GUARD_STREAK: usize = 10;

impl DivergenceGuard {
    pub fn new(eta: f64) -> Self {
        Self { eta, streak: 0, halved: false }
    }

    pub fn observe(&mut self, before: f64, after: f64) -> Result<()> {
        if !after.is_finite() {
            return Err(Error::Divergence {
                eta: self.eta,
                detail: "objective became non-finite".into(),
            });
        }
        // Rounding noise near an optimum is not an increase.
        if after > before + 1e-12 * before.abs() {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= GUARD_STREAK {
            if self.halved {
                return Err(Error::Divergence {
                    eta: self.eta,
                    detail: format!("objective rose for {GUARD_STREAK} consecutive steps after halving"),
                });
            }
            self.eta *= 0.5;
            self.halved = true;
            self.streak = 0;
        }
        Ok(())
    }
}
