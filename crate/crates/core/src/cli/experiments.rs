//! Experiment harnesses: the XOR comparison, train/test loss curves of the
//! compact ensemble against plain boosting, and depth histograms of the
//! selected trees.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{run_chain, BoostConfig, InitMode};
use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::eval::{auc, depth_histogram, loss_curve, CurveRow};
use crate::fsa::{fsa_multi_sparsity, fsa_on_leaves, FsaParams};
use crate::loss::LossKind;
use crate::pool::{compile_design, generate_pool, PoolStrategy};
use crate::rng;
use crate::tree::CompactEnsemble;

/// XOR labeling of the unit square: +1 iff exactly one coordinate is at
/// least 0.5.
pub fn xor_label(x1: f64, x2: f64) -> f64 {
    if (x1 >= 0.5) != (x2 >= 0.5) {
        1.0
    } else {
        -1.0
    }
}

/// `n` points uniform on `[0,1)^2` with XOR labels.
pub fn make_xor(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::param("n", format!("XOR needs at least 4 rows, got {n}")));
    }
    let mut r = rng::rng_for(seed, rng::stream::XOR);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (r.random(), r.random());
        x.extend([a, b]);
        y.push(xor_label(a, b));
    }
    Dataset::new(x, 2, y, Task::BinaryClassification, Some(vec!["x1".into(), "x2".into()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorSettings {
    pub runs: usize,
    pub rows: usize,
    pub pool_trees: usize,
    pub depth: usize,
    pub k: usize,
    pub fsa: FsaParams,
    pub boost: BoostConfig,
    pub gb_learning_rates: Vec<f64>,
    pub gb_max_rounds: usize,
    pub seed: u64,
}

impl Default for XorSettings {
    fn default() -> Self {
        Self {
            runs: 100,
            rows: 100,
            pool_trees: 400,
            depth: 2,
            k: 1,
            fsa: FsaParams {
                k: 1,
                eta: XOR_ETA,
                ..FsaParams::default()
            },
            boost: BoostConfig::default(),
            gb_learning_rates: vec![0.1, 0.3],
            gb_max_rounds: 200,
            seed: 0,
        }
    }
}

/// Step size used for XOR selection runs (sum-gradient scale, N = 100).
pub const XOR_ETA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbCurve {
    pub learning_rate: f64,
    /// Mean test AUC over runs after `r + 1` rounds, `r = 0..max_rounds`.
    pub mean_test_auc: Vec<f64>,
    pub mean_train_auc: Vec<f64>,
    /// First round count whose mean test AUC reaches the RET mean test AUC.
    pub rounds_to_match: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorReport {
    pub runs: usize,
    pub ret_k: usize,
    pub ret_train_auc: f64,
    pub ret_test_auc: f64,
    /// Per-run (train, test) AUC of the compact ensemble.
    pub ret_runs: Vec<(f64, f64)>,
    pub gb: Vec<GbCurve>,
    /// Best (smallest) round count over the tuned learning rates.
    pub gb_rounds_to_match: Option<usize>,
    pub gb_learning_rate: Option<f64>,
    pub settings: XorSettings,
}

struct XorRun {
    ret: (f64, f64),
    /// Per learning rate, per round: (train AUC, test AUC).
    gb: Vec<Vec<(f64, f64)>>,
}

/// AUC after each boosting round, evaluated incrementally.
fn boosting_aucs(train: &Dataset, test: &Dataset, cfg: &BoostConfig) -> Result<Vec<(f64, f64)>> {
    let chain = run_chain(train, cfg)?;
    let bias = chain.init.bias.unwrap_or(0.0);
    let mut tr = vec![bias; train.n_rows()];
    let mut te = vec![bias; test.n_rows()];
    let mut out = Vec::with_capacity(chain.trees.len());
    for t in &chain.trees {
        for (m, x) in tr.iter_mut().zip(train.rows()) {
            *m += t.predict_unchecked(x);
        }
        for (m, x) in te.iter_mut().zip(test.rows()) {
            *m += t.predict_unchecked(x);
        }
        out.push((auc(&tr, train.labels())?, auc(&te, test.labels())?));
    }
    Ok(out)
}

fn xor_run(s: &XorSettings, run: usize) -> Result<XorRun> {
    let base = rng::derive_seed(s.seed, run as u64);
    let train = make_xor(s.rows, rng::derive_seed(base, 0))?;
    let test = make_xor(s.rows, rng::derive_seed(base, 1))?;
    let boost = BoostConfig {
        loss: LossKind::Logistic,
        ..s.boost.clone()
    };
    let strategy = PoolStrategy::Scsd {
        trees: s.pool_trees,
        depth: s.depth,
    };
    let pool = generate_pool(&train, &strategy, &boost, base)?;
    let design = compile_design(&pool, &train)?;
    let params = FsaParams {
        k: s.k,
        seed: base,
        ..s.fsa.clone()
    };
    let sel = fsa_on_leaves(&pool, &design, &train, LossKind::Logistic, &params)?;
    let ret = (
        auc(&sel.ensemble.predict_dataset(&train)?, train.labels())?,
        auc(&sel.ensemble.predict_dataset(&test)?, test.labels())?,
    );
    let gb = s
        .gb_learning_rates
        .iter()
        .map(|&lr| {
            let cfg = BoostConfig {
                learning_rate: lr,
                depth_cap: s.depth,
                n_rounds: s.gb_max_rounds,
                init_mode: InitMode::ConstantBias,
                ..boost.clone()
            };
            boosting_aucs(&train, &test, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(XorRun { ret, gb })
}

/// Repeats the XOR comparison `runs` times with fresh train and test sets:
/// an SCSD pool reduced to `k` trees against plain boosting at every round
/// count up to `gb_max_rounds`.
pub fn xor_experiment(s: &XorSettings) -> Result<XorReport> {
    if s.runs == 0 || s.gb_learning_rates.is_empty() || s.gb_max_rounds == 0 {
        return Err(Error::param("experiment", "runs, learning rates and rounds must be non-empty"));
    }
    let runs: Vec<XorRun> = (0..s.runs)
        .into_par_iter()
        .map(|r| xor_run(s, r))
        .collect::<Result<Vec<_>>>()?;
    let n = s.runs as f64;
    let ret_train_auc = runs.iter().map(|r| r.ret.0).sum::<f64>() / n;
    let ret_test_auc = runs.iter().map(|r| r.ret.1).sum::<f64>() / n;
    let gb: Vec<GbCurve> = s
        .gb_learning_rates
        .iter()
        .enumerate()
        .map(|(li, &lr)| {
            let mean = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                (0..s.gb_max_rounds)
                    .map(|t| runs.iter().map(|r| f(&r.gb[li][t])).sum::<f64>() / n)
                    .collect()
            };
            let mean_test_auc = mean(|p| p.1);
            let rounds_to_match = mean_test_auc.iter().position(|&a| a >= ret_test_auc).map(|t| t + 1);
            GbCurve {
                learning_rate: lr,
                mean_train_auc: mean(|p| p.0),
                mean_test_auc,
                rounds_to_match,
            }
        })
        .collect();
    let best = gb
        .iter()
        .filter_map(|c| c.rounds_to_match.map(|r| (r, c.learning_rate)))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(XorReport {
        runs: s.runs,
        ret_k: s.k,
        ret_train_auc,
        ret_test_auc,
        ret_runs: runs.iter().map(|r| r.ret).collect(),
        gb_rounds_to_match: best.map(|b| b.0),
        gb_learning_rate: best.map(|b| b.1),
        gb,
        settings: s.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub levels: Vec<usize>,
    pub ret: Vec<CurveRow>,
    pub gb: Vec<CurveRow>,
}

/// Train and test mean loss of the compact ensemble (one multi-sparsity run
/// over `levels`) and of plain boosting truncated at the same tree counts.
pub fn loss_curves(
    train: &Dataset,
    test: &Dataset,
    strategy: &PoolStrategy,
    boost: &BoostConfig,
    fsa: &FsaParams,
    levels: &[usize],
    seed: u64,
) -> Result<CurveReport> {
    let mut desc = levels.to_vec();
    desc.sort_unstable_by(|a, b| b.cmp(a));
    desc.dedup();
    let pool = generate_pool(train, strategy, boost, seed)?;
    let design = compile_design(&pool, train)?;
    let multi = fsa_multi_sparsity(&pool, &design, train, boost.loss, fsa, &desc)?;
    let ret_models: Vec<(usize, &CompactEnsemble)> = multi.models.iter().rev().map(|m| (m.k, &m.ensemble)).collect();
    let ret = loss_curve(&ret_models, train, test)?;

    let gb_cfg = BoostConfig {
        depth_cap: *strategy.depths().iter().min().unwrap(),
        n_rounds: desc[0],
        init_mode: InitMode::ConstantBias,
        ..boost.clone()
    };
    let chain = run_chain(train, &gb_cfg)?;
    let asc: Vec<usize> = desc.iter().rev().copied().collect();
    let gb_models = asc
        .iter()
        .map(|&k| chain.prefix_ensemble(k).map(|m| (k, m)))
        .collect::<Result<Vec<_>>>()?;
    let gb_refs: Vec<(usize, &CompactEnsemble)> = gb_models.iter().map(|(k, m)| (*k, m)).collect();
    let gb = loss_curve(&gb_refs, train, test)?;
    Ok(CurveReport { levels: asc, ret, gb })
}

/// Depth histogram of the trees selected at each level.
pub fn depth_histograms(
    train: &Dataset,
    strategy: &PoolStrategy,
    boost: &BoostConfig,
    fsa: &FsaParams,
    levels: &[usize],
    seed: u64,
) -> Result<BTreeMap<usize, BTreeMap<usize, f64>>> {
    let mut desc = levels.to_vec();
    desc.sort_unstable_by(|a, b| b.cmp(a));
    desc.dedup();
    let pool = generate_pool(train, strategy, boost, seed)?;
    let design = compile_design(&pool, train)?;
    let depths = strategy.depths();
    if desc.len() == 1 {
        let params = FsaParams { k: desc[0], ..fsa.clone() };
        let sel = fsa_on_leaves(&pool, &design, train, boost.loss, &params)?;
        return Ok(BTreeMap::from([(desc[0], depth_histogram(&sel.ensemble, &depths))]));
    }
    let multi = fsa_multi_sparsity(&pool, &design, train, boost.loss, fsa, &desc)?;
    Ok(multi
        .models
        .iter()
        .map(|m| (m.k, depth_histogram(&m.ensemble, &depths)))
        .collect())
}
