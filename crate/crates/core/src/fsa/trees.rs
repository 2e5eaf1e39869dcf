//! Selection of trees by treating each tree's output as one feature of a
//! linear model. Only meaningful for single-chain pools.

use rayon::prelude::*;

use super::{fsa_linear, FsaParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::pool::TreePool;
use crate::tree::{CompactEnsemble, EnsembleMeta, Tree};

#[derive(Debug, Clone, PartialEq)]
pub struct TreeWeights {
    /// One weight per pool tree; zero outside `support`.
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    pub eta: f64,
    pub loss: LossKind,
}

impl TreeWeights {
    /// The weighted surviving trees as a model with zero intercept.
    pub fn to_ensemble(&self, pool: &TreePool) -> Result<CompactEnsemble> {
        if self.weights.len() != pool.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a pool of {} trees",
                self.weights.len(),
                pool.len()
            )));
        }
        let trees = self
            .support
            .iter()
            .map(|&j| {
                let mut t = pool.trees[j].clone();
                t.scale_weights(self.weights[j]);
                t
            })
            .collect();
        let meta = EnsembleMeta {
            seed: Some(pool.master_seed),
            strategy: Some(pool.strategy.name().to_string()),
            source_ids: self.support.clone(),
            config: pool.config.clone(),
        };
        let provenance = self.support.iter().map(|&j| pool.provenance[j]).collect();
        CompactEnsemble::new(trees, provenance, 0.0, self.loss, meta)
    }
}

/// Row-major `n x M` matrix of tree outputs `T_j(x_i)`.
pub fn tree_responses(trees: &[Tree], ds: &Dataset) -> Result<Vec<f64>> {
    trees.iter().try_for_each(|t| t.check_dimension(ds.n_features()))?;
    let m = trees.len();
    let mut out = vec![0.0; ds.n_rows() * m];
    if m == 0 {
        return Ok(out);
    }
    out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let x = ds.row(i);
        for (o, t) in row.iter_mut().zip(trees) {
            *o = t.predict_unchecked(x);
        }
    });
    Ok(out)
}

pub fn fsa_on_trees(pool: &TreePool, ds: &Dataset, loss: LossKind, params: &FsaParams) -> Result<TreeWeights> {
    if !pool.strategy.is_single_chain() {
        return Err(Error::Config(format!(
            "tree-response selection needs a single-chain pool, got {}",
            pool.strategy.name()
        )));
    }
    if pool.is_empty() {
        return Err(Error::Data("tree pool is empty".into()));
    }
    let x = tree_responses(&pool.trees, ds)?;
    let fit = fsa_linear(&x, pool.len(), ds.labels(), loss, params)?;
    Ok(TreeWeights {
        weights: fit.coef,
        support: fit.support,
        objective: fit.objective,
        eta: fit.eta,
        loss,
    })
}
