//! K-fold cross-validated grid search for the compact-ensemble pipeline and
//! for plain gradient boosting.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{run_chain, BoostConfig, InitMode};
use crate::dataset::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::eval::mean_loss;
use crate::fsa::{fsa_multi_sparsity, fsa_on_leaves, FsaParams};
use crate::pool::{compile_design, generate_pool, PoolStrategy};
use crate::rng;
use crate::tree::CompactEnsemble;

/// `round(k_max^(i / (count - 1)))` for `i = 0..count`, deduplicated and
/// ascending; `count = 1` yields just `k_max`.
pub fn exponential_grid(k_max: usize, count: usize) -> Result<Vec<usize>> {
    if k_max < 1 || count < 1 {
        return Err(Error::param("grid", "k_max and count must be >= 1"));
    }
    if count == 1 {
        return Ok(vec![k_max]);
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| (k_max as f64).powf(i as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    *out.last_mut().unwrap() = k_max;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelGrid {
    List(Vec<usize>),
    Exponential { k_max: usize, count: usize },
}

impl LevelGrid {
    /// Ascending, deduplicated levels.
    pub fn levels(&self) -> Result<Vec<usize>> {
        match self {
            LevelGrid::List(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                if v.is_empty() || v[0] == 0 {
                    return Err(Error::param("levels", "need at least one level, all >= 1"));
                }
                Ok(v)
            }
            LevelGrid::Exponential { k_max, count } => exponential_grid(*k_max, *count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Pool generation followed by annealed leaf-group selection.
    Ret,
    /// Plain gradient boosting truncated at k rounds.
    Gb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub levels: LevelGrid,
    /// Pool candidates for the compact-ensemble pipeline.
    pub pools: Vec<PoolStrategy>,
    pub rho: Vec<f64>,
    /// Fixed selection settings; `k` and `rho` are taken from the grid.
    pub fsa: FsaParams,
    /// Loss, damping and leaf size shared by every boosting run.
    pub boost: BoostConfig,
    pub gb_depths: Vec<usize>,
    pub gb_learning_rates: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            levels: LevelGrid::Exponential { k_max: 100, count: 10 },
            pools: vec![PoolStrategy::Scsd { trees: 400, depth: 2 }],
            rho: vec![1e-3],
            fsa: FsaParams::default(),
            boost: BoostConfig::default(),
            gb_depths: vec![2],
            gb_learning_rates: vec![0.1, 0.3],
        }
    }
}

impl GridSpec {
    pub fn validate(&self, pipeline: Pipeline) -> Result<()> {
        self.levels.levels()?;
        match pipeline {
            Pipeline::Ret => {
                if self.pools.is_empty() || self.rho.is_empty() {
                    return Err(Error::param("grid", "pool and rho grids must be non-empty"));
                }
                self.pools.iter().try_for_each(PoolStrategy::validate)?;
                if self.rho.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                    return Err(Error::param("rho", "grid values must be finite and >= 0"));
                }
            }
            Pipeline::Gb => {
                if self.gb_depths.is_empty() || self.gb_learning_rates.is_empty() {
                    return Err(Error::param("grid", "depth and learning-rate grids must be non-empty"));
                }
            }
        }
        Ok(())
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combo {
    pub pipeline: Pipeline,
    /// Index of the pool (or boosting depth) candidate.
    pub candidate: usize,
    pub label: String,
    pub k: usize,
    pub rho: Option<f64>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub combo: Combo,
    /// Mean validation loss over the folds; `None` if any fold failed.
    pub cv_loss: Option<f64>,
    pub fold_losses: Vec<f64>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best: Combo,
    pub best_loss: f64,
    pub model: CompactEnsemble,
    pub leaderboard: Vec<LeaderRow>,
}

/// Key order used for the argmin: loss, then smaller k, smaller rho (or
/// learning rate), then earlier candidate.
fn better(a: &LeaderRow, b: &LeaderRow) -> bool {
    let (la, lb) = (a.cv_loss.unwrap(), b.cv_loss.unwrap());
    let key = |r: &LeaderRow| {
        (
            r.combo.k,
            r.combo.rho.or(r.combo.learning_rate).unwrap_or(0.0),
            r.combo.candidate,
        )
    };
    let (ka, kb) = (key(a), key(b));
    la.total_cmp(&lb)
        .then(ka.0.cmp(&kb.0))
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.cmp(&kb.2))
        .is_lt()
}

/// Validation losses per k level (ascending `levels`) for one fold job.
type FoldLosses = std::result::Result<Vec<f64>, String>;

fn ret_fold(
    train: &Dataset,
    val: &Dataset,
    strategy: &PoolStrategy,
    grid: &GridSpec,
    rho: f64,
    levels: &[usize],
    seed: u64,
) -> FoldLosses {
    let run = || -> Result<Vec<f64>> {
        let pool = generate_pool(train, strategy, &grid.boost, seed)?;
        let design = compile_design(&pool, train)?;
        let desc: Vec<usize> = levels.iter().rev().copied().collect();
        let params = FsaParams { rho, ..grid.fsa.clone() };
        let out = fsa_multi_sparsity(&pool, &design, train, grid.boost.loss, &params, &desc)?;
        out.models.iter().rev().map(|m| mean_loss(&m.ensemble, val)).collect()
    };
    run().map_err(|e| e.to_string())
}

fn gb_fold(train: &Dataset, val: &Dataset, boost: &BoostConfig, levels: &[usize]) -> FoldLosses {
    let run = || -> Result<Vec<f64>> {
        let cfg = BoostConfig {
            n_rounds: *levels.last().unwrap(),
            init_mode: InitMode::ConstantBias,
            ..boost.clone()
        };
        let chain = run_chain(train, &cfg)?;
        levels.iter().map(|&k| mean_loss(&chain.prefix_ensemble(k)?, val)).collect()
    };
    run().map_err(|e| e.to_string())
}

/// Grid search with `k_folds`-fold cross-validation on `ds`. Every fold
/// regenerates its own pool from the fold's training rows. The winning
/// combination is refit on all of `ds`.
pub fn cv_select(ds: &Dataset, grid: &GridSpec, pipeline: Pipeline, k_folds: usize, seed: u64) -> Result<CvOutcome> {
    grid.validate(pipeline)?;
    let folds = make_folds(ds, k_folds, seed)?;
    let levels = grid.levels.levels()?;
    let fold_data = (0..k_folds)
        .map(|f| {
            let (tr, va) = folds.fold_rows(f);
            Ok((ds.subset(&tr)?, ds.subset(&va)?))
        })
        .collect::<Result<Vec<_>>>()?;

    // (candidate label, candidate index, rho or learning rate) per job group.
    struct Group {
        candidate: usize,
        label: String,
        rho: Option<f64>,
        learning_rate: Option<f64>,
        levels: Vec<usize>,
    }
    let mut groups = Vec::new();
    match pipeline {
        Pipeline::Ret => {
            for (c, s) in grid.pools.iter().enumerate() {
                let lv: Vec<usize> = levels.iter().copied().filter(|&k| k <= s.total_trees()).collect();
                for &rho in &grid.rho {
                    groups.push(Group {
                        candidate: c,
                        label: format!("{}:{}", s.name(), s.depths().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")),
                        rho: Some(rho),
                        learning_rate: None,
                        levels: lv.clone(),
                    });
                }
            }
        }
        Pipeline::Gb => {
            for (c, &d) in grid.gb_depths.iter().enumerate() {
                for &lr in &grid.gb_learning_rates {
                    groups.push(Group {
                        candidate: c,
                        label: format!("depth:{d}"),
                        rho: None,
                        learning_rate: Some(lr),
                        levels: levels.clone(),
                    });
                }
            }
        }
    }
    groups.retain(|g| !g.levels.is_empty());
    if groups.is_empty() {
        return Err(Error::param("levels", "no sparsity level fits any pool candidate"));
    }

    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..k_folds).map(move |f| (g, f))).collect();
    let results: Vec<FoldLosses> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let grp = &groups[g];
            let (tr, va) = &fold_data[f];
            match pipeline {
                Pipeline::Ret => ret_fold(
                    tr,
                    va,
                    &grid.pools[grp.candidate],
                    grid,
                    grp.rho.unwrap(),
                    &grp.levels,
                    rng::derive_seed(seed, rng::stream::TUNE + f as u64),
                ),
                Pipeline::Gb => {
                    let boost = BoostConfig {
                        depth_cap: grid.gb_depths[grp.candidate],
                        learning_rate: grp.learning_rate.unwrap(),
                        ..grid.boost.clone()
                    };
                    gb_fold(tr, va, &boost, &grp.levels)
                }
            }
        })
        .collect();

    let mut leaderboard = Vec::new();
    for (g, grp) in groups.iter().enumerate() {
        let fold_results = &results[g * k_folds..(g + 1) * k_folds];
        let failure = fold_results.iter().find_map(|r| r.as_ref().err().cloned());
        for (li, &k) in grp.levels.iter().enumerate() {
            let combo = Combo {
                pipeline,
                candidate: grp.candidate,
                label: grp.label.clone(),
                k,
                rho: grp.rho,
                learning_rate: grp.learning_rate,
            };
            let row = match &failure {
                Some(msg) => LeaderRow {
                    combo,
                    cv_loss: None,
                    fold_losses: Vec::new(),
                    diagnostic: Some(msg.clone()),
                },
                None => {
                    let fl: Vec<f64> = fold_results.iter().map(|r| r.as_ref().unwrap()[li]).collect();
                    LeaderRow {
                        combo,
                        cv_loss: Some(fl.iter().sum::<f64>() / k_folds as f64),
                        fold_losses: fl,
                        diagnostic: None,
                    }
                }
            };
            leaderboard.push(row);
        }
    }

    let best = leaderboard
        .iter()
        .filter(|r| r.cv_loss.is_some_and(f64::is_finite))
        .fold(None::<&LeaderRow>, |acc, r| match acc {
            Some(b) if !better(r, b) => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| {
            let why = leaderboard.iter().find_map(|r| r.diagnostic.clone()).unwrap_or_default();
            Error::Numerical(format!("every grid combination failed: {why}"))
        })?
        .clone();

    let model = refit(ds, grid, &best.combo, seed)?;
    Ok(CvOutcome {
        best_loss: best.cv_loss.unwrap(),
        best: best.combo,
        model,
        leaderboard,
    })
}

/// Trains the given combination on all of `ds`.
pub fn refit(ds: &Dataset, grid: &GridSpec, combo: &Combo, seed: u64) -> Result<CompactEnsemble> {
    match combo.pipeline {
        Pipeline::Ret => {
            let strategy = grid
                .pools
                .get(combo.candidate)
                .ok_or_else(|| Error::param("candidate", "no such pool candidate"))?;
            let pool = generate_pool(ds, strategy, &grid.boost, seed)?;
            let design = compile_design(&pool, ds)?;
            let params = FsaParams {
                k: combo.k,
                rho: combo.rho.unwrap_or(grid.fsa.rho),
                ..grid.fsa.clone()
            };
            Ok(fsa_on_leaves(&pool, &design, ds, grid.boost.loss, &params)?.ensemble)
        }
        Pipeline::Gb => {
            let depth = *grid
                .gb_depths
                .get(combo.candidate)
                .ok_or_else(|| Error::param("candidate", "no such depth candidate"))?;
            let cfg = BoostConfig {
                depth_cap: depth,
                learning_rate: combo.learning_rate.unwrap_or(grid.boost.learning_rate),
                n_rounds: combo.k,
                init_mode: InitMode::ConstantBias,
                ..grid.boost.clone()
            };
            run_chain(ds, &cfg)?.prefix_ensemble(combo.k)
        }
    }
}

pub fn leaderboard_csv(rows: &[LeaderRow]) -> String {
    let mut s = String::from("pipeline,candidate,k,rho,learning_rate,cv_loss,diagnostic\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let c = &r.combo;
        let diag = r.diagnostic.as_deref().unwrap_or("").replace(['"', '\n', ','], " ");
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            match c.pipeline {
                Pipeline::Ret => "ret",
                Pipeline::Gb => "gb",
            },
            c.label,
            c.k,
            opt(c.rho),
            opt(c.learning_rate),
            opt(r.cv_loss),
            diag
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;

    #[test]
    fn grids() {
        assert_eq!(exponential_grid(100, 3).unwrap(), vec![1, 10, 100]);
        assert_eq!(exponential_grid(1, 5).unwrap(), vec![1]);
        assert_eq!(exponential_grid(7, 1).unwrap(), vec![7]);
        let g = exponential_grid(600, 50).unwrap();
        assert_eq!((g[0], *g.last().unwrap()), (1, 600));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(exponential_grid(0, 3).is_err());
    }

    fn toy() -> Dataset {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.5 { -1.0 } else { 1.0 }).collect();
        Dataset::new(x, 1, y, Task::BinaryClassification, None).unwrap()
    }

    #[test]
    fn single_combination_is_selected() {
        let grid = GridSpec {
            levels: LevelGrid::List(vec![2]),
            pools: vec![PoolStrategy::Scsd { trees: 5, depth: 1 }],
            rho: vec![0.01],
            fsa: FsaParams { n_iter: 30, eta: 0.01, ..FsaParams::default() },
            ..GridSpec::default()
        };
        let out = cv_select(&toy(), &grid, Pipeline::Ret, 4, 1).unwrap();
        assert_eq!(out.leaderboard.len(), 1);
        assert_eq!(out.best.k, 2);
        assert_eq!(out.leaderboard[0].fold_losses.len(), 4);
        assert!(out.model.k() <= 2);
    }

    #[test]
    fn duplicated_combination_ties_to_first() {
        let grid = GridSpec {
            levels: LevelGrid::List(vec![3]),
            gb_depths: vec![1, 1],
            gb_learning_rates: vec![0.3],
            ..GridSpec::default()
        };
        let out = cv_select(&toy(), &grid, Pipeline::Gb, 3, 0).unwrap();
        assert_eq!(out.leaderboard[0].cv_loss, out.leaderboard[1].cv_loss);
        assert_eq!(out.best.candidate, 0);
    }

    #[test]
    fn failing_combinations_are_excluded() {
        // A learning rate above 1 is rejected by the boosting engine.
        let grid = GridSpec {
            levels: LevelGrid::List(vec![1, 2]),
            gb_depths: vec![1],
            gb_learning_rates: vec![2.0, 0.3],
            ..GridSpec::default()
        };
        let out = cv_select(&toy(), &grid, Pipeline::Gb, 3, 0).unwrap();
        let failed: Vec<_> = out.leaderboard.iter().filter(|r| r.cv_loss.is_none()).collect();
        assert_eq!(failed.len(), 2);
        assert!(failed.iter().all(|r| r.diagnostic.is_some() && r.combo.learning_rate == Some(2.0)));
        assert_eq!(out.best.learning_rate, Some(0.3));
        assert_eq!(leaderboard_csv(&out.leaderboard).lines().count(), 5);

        let all_bad = GridSpec { gb_learning_rates: vec![2.0], ..grid };
        assert!(cv_select(&toy(), &all_bad, Pipeline::Gb, 3, 0).is_err());
    }
}
