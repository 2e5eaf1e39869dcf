//! Selection of whole trees from a pool while retraining their leaf weights
//! (group-wise annealing over the leaf-weight bank), plus the variant that
//! emits one model per sparsity level from a single annealing run.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{rank_top, schedule, BatchMode, DivergenceGuard, FsaParams, LeafWeightBank};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fsa::group_score;
use crate::loss::LossKind;
use crate::pool::{LeafDesign, TreePool};
use crate::rng;
use crate::tree::{CompactEnsemble, EnsembleMeta};

const ROW_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct FsaTrace {
    /// Active tree ids (ascending) after each iteration's pruning step.
    pub active: Vec<Vec<usize>>,
    /// Penalized objective after each iteration.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FsaOutcome {
    pub ensemble: CompactEnsemble,
    /// Pool ids of the surviving trees, ascending.
    pub selected: Vec<usize>,
    pub bank: LeafWeightBank,
    pub intercept: f64,
    /// Final penalized objective on the training rows.
    pub objective: f64,
    /// Step size in effect at the end (after any halving).
    pub eta: f64,
    pub trace: Option<FsaTrace>,
}

#[derive(Debug, Clone)]
pub struct LevelModel {
    pub k: usize,
    /// Main-loop iteration at which the snapshot was taken.
    pub iteration: usize,
    pub ensemble: CompactEnsemble,
    pub selected: Vec<usize>,
    pub intercept: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct MultiSparsityOutcome {
    /// One model per requested level, in the order given (largest k first).
    pub models: Vec<LevelModel>,
    pub main_iterations: usize,
    pub refine_passes: usize,
    pub refine_iterations: usize,
}

struct Problem<'a> {
    design: &'a LeafDesign,
    labels: &'a [f64],
    loss: LossKind,
    rho: f64,
}

#[derive(Clone)]
struct State {
    bank: LeafWeightBank,
    intercept: f64,
    scores: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.labels.len()
    }

    fn fill_scores(&self, bank: &LeafWeightBank, intercept: f64, out: &mut [f64]) {
        out.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, chunk)| {
            let start = c * ROW_CHUNK;
            chunk.fill(intercept);
            for &j in bank.active() {
                let col = &self.design.tree_column(j)[start..start + chunk.len()];
                let w = bank.group(j);
                for (o, &l) in chunk.iter_mut().zip(col) {
                    *o += w[l as usize];
                }
            }
        });
    }

    /// Data term; chunk partial sums are combined in chunk order.
    fn data_loss(&self, scores: &[f64]) -> f64 {
        let partial: Vec<f64> = scores
            .par_chunks(ROW_CHUNK)
            .zip(self.labels.par_chunks(ROW_CHUNK))
            .map(|(s, y)| self.loss.total(s, y))
            .collect();
        partial.iter().sum()
    }

    fn objective(&self, st: &State) -> f64 {
        self.data_loss(&st.scores) + self.rho * st.bank.squared_norm()
    }

    /// Gradient of the penalized objective with respect to the leaf weights of
    /// `groups` and the intercept. `rows = None` means every row; otherwise the
    /// listed rows with their sum scaled by `scale`.
    fn gradient(
        &self,
        st: &State,
        groups: &[usize],
        rows: Option<&[usize]>,
        scale: f64,
    ) -> (Vec<Vec<f64>>, f64) {
        let loss = self.loss;
        let g: Vec<f64> = st
            .scores
            .par_iter()
            .zip(self.labels.par_iter())
            .map(|(&u, &y)| loss.grad(u, y))
            .collect();
        let intercept_grad = match rows {
            None => g.iter().sum::<f64>(),
            Some(rs) => rs.iter().map(|&r| g[r]).sum::<f64>() * scale,
        };
        let grads = groups
            .par_iter()
            .map(|&j| {
                let w = st.bank.group(j);
                let mut acc = vec![0.0; w.len()];
                match rows {
                    None => {
                        for (l, a) in acc.iter_mut().enumerate() {
                            *a = self.design.leaf_rows(j, l).iter().map(|&r| g[r as usize]).sum();
                        }
                    }
                    Some(rs) => {
                        let col = self.design.tree_column(j);
                        for &r in rs {
                            acc[col[r] as usize] += g[r];
                        }
                        for a in &mut acc {
                            *a *= scale;
                        }
                    }
                }
                for (a, &b) in acc.iter_mut().zip(w) {
                    *a += 2.0 * self.rho * b;
                }
                acc
            })
            .collect();
        (grads, intercept_grad)
    }

    fn step(&self, st: &mut State, eta: f64, rows: Option<&[usize]>, scale: f64) -> Result<()> {
        let groups = st.bank.active().to_vec();
        let (grads, gi) = self.gradient(st, &groups, rows, scale);
        for (&j, gj) in groups.iter().zip(&grads) {
            for (b, d) in st.bank.group_mut(j).iter_mut().zip(gj) {
                *b -= eta * d;
            }
        }
        st.intercept -= eta * gi;
        if !st.intercept.is_finite() || st.bank.as_flat().iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                eta,
                detail: "non-finite leaf weight".into(),
            });
        }
        let mut scores = std::mem::take(&mut st.scores);
        self.fill_scores(&st.bank, st.intercept, &mut scores);
        st.scores = scores;
        Ok(())
    }

    /// Drops every active group outside `keep` and updates the scores.
    fn prune(&self, st: &mut State, keep: &[usize]) {
        let mut kept = keep.to_vec();
        kept.sort_unstable();
        let removed: Vec<usize> = st
            .bank
            .active()
            .iter()
            .copied()
            .filter(|j| kept.binary_search(j).is_err())
            .collect();
        for &j in &removed {
            let col = self.design.tree_column(j);
            let w = st.bank.group(j);
            for (s, &l) in st.scores.iter_mut().zip(col) {
                *s -= w[l as usize];
            }
        }
        st.bank.retain(&kept);
    }

    fn ranking(&self, st: &State) -> Vec<usize> {
        let scored = st
            .bank
            .active()
            .iter()
            .map(|&j| (j, group_score(st.bank.group(j), st.bank.group_len(j).max(1))))
            .collect();
        rank_top(scored, st.bank.active().len())
    }
}

/// Row batches for successive iterations: reshuffled every epoch from the seed.
struct Batcher {
    size: Option<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Batcher {
    fn new(mode: BatchMode, n: usize, seed: u64) -> Self {
        let size = match mode {
            BatchMode::Full => None,
            BatchMode::Minibatch { size } if size >= n => None,
            BatchMode::Minibatch { size } => Some(size),
        };
        Self {
            size,
            order: (0..n).collect(),
            pos: n,
            rng: rng::rng_for(seed, rng::stream::MINIBATCH),
        }
    }

    /// Next batch and the factor rescaling its sum to the full-data scale.
    fn next(&mut self) -> Option<(Vec<usize>, f64)> {
        let size = self.size?;
        let n = self.order.len();
        if self.pos + size > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let mut batch = self.order[self.pos..self.pos + size].to_vec();
        batch.sort_unstable();
        self.pos += size;
        Some((batch, n as f64 / size as f64))
    }
}

fn check_inputs(pool: &TreePool, design: &LeafDesign, ds: &Dataset, loss: LossKind) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::Data("tree pool is empty".into()));
    }
    if design.n_trees() != pool.len() || design.n_rows() != ds.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "design is {} rows x {} trees, expected {} x {}",
            design.n_rows(),
            design.n_trees(),
            ds.n_rows(),
            pool.len()
        )));
    }
    if pool.trees.iter().zip(design.n_leaves()).any(|(t, &n)| t.n_leaves() != n) {
        return Err(Error::DimensionMismatch("design was compiled for another pool".into()));
    }
    loss.check_labels(ds.labels())
}

struct Snapshot {
    level: usize,
    iteration: usize,
    state: State,
}

struct AnnealRun {
    state: State,
    eta: f64,
    trace: Option<FsaTrace>,
    snapshots: Vec<Snapshot>,
}

/// Main annealing loop. `levels` are `(k_i, e_i)` pairs: at iteration `e_i`
/// the top `k_i` groups are snapshotted and the loop itself keeps at most
/// `k_i` groups from then on, so successive snapshots are nested.
fn anneal(
    prob: &Problem<'_>,
    params: &FsaParams,
    k: usize,
    levels: &[(usize, usize)],
) -> Result<AnnealRun> {
    let m = prob.design.n_trees();
    let (bias, _) = prob.loss.constant_bias(prob.labels);
    let mut st = State {
        bank: LeafWeightBank::zeros(prob.design.n_leaves()),
        intercept: bias,
        scores: vec![bias; prob.n()],
    };
    let mut guard = DivergenceGuard::new(params.eta);
    let mut batcher = Batcher::new(params.batch, prob.n(), params.seed);
    let mut trace = params.record_trace.then(|| FsaTrace {
        active: Vec::with_capacity(params.n_iter),
        objective: Vec::with_capacity(params.n_iter),
    });
    let mut snapshots = Vec::new();
    let mut before = prob.objective(&st);
    for e in 1..=params.n_iter {
        let batch = batcher.next();
        let (rows, scale) = match &batch {
            Some((b, s)) => (Some(b.as_slice()), *s),
            None => (None, 1.0),
        };
        prob.step(&mut st, guard.eta, rows, scale)?;
        guard.observe(before, prob.objective(&st))?;

        let ranking = prob.ranking(&st);
        let mut keep = schedule(e, k, m, params.n_iter, params.mu)?.min(ranking.len());
        for (level, &(k_i, e_i)) in levels.iter().enumerate() {
            if e_i == e {
                let support = &ranking[..k_i.min(ranking.len())];
                let mut snap = st.clone();
                prob.prune(&mut snap, support);
                snapshots.push(Snapshot {
                    level,
                    iteration: e,
                    state: snap,
                });
                keep = keep.min(k_i);
            }
        }
        prob.prune(&mut st, &ranking[..keep]);
        before = prob.objective(&st);
        if let Some(t) = trace.as_mut() {
            t.active.push(st.bank.active().to_vec());
            t.objective.push(before);
        }
    }
    Ok(AnnealRun {
        state: st,
        eta: guard.eta,
        trace,
        snapshots,
    })
}

fn build_ensemble(pool: &TreePool, st: &State, loss: LossKind) -> Result<(CompactEnsemble, Vec<usize>)> {
    let selected = st.bank.active().to_vec();
    let trees = selected
        .iter()
        .map(|&j| pool.trees[j].with_leaf_weights(st.bank.group(j).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let provenance = selected.iter().map(|&j| pool.provenance[j]).collect();
    let meta = EnsembleMeta {
        seed: Some(pool.master_seed),
        strategy: Some(pool.strategy.name().to_string()),
        source_ids: selected.clone(),
        config: pool.config.clone(),
    };
    Ok((CompactEnsemble::new(trees, provenance, st.intercept, loss, meta)?, selected))
}

/// Selects at most `params.k` trees from the pool and retrains their leaf
/// weights. Leaf weights start at zero; an unpenalized intercept starts at
/// the loss-minimizing constant and is never pruned.
pub fn fsa_on_leaves(
    pool: &TreePool,
    design: &LeafDesign,
    ds: &Dataset,
    loss: LossKind,
    params: &FsaParams,
) -> Result<FsaOutcome> {
    check_inputs(pool, design, ds, loss)?;
    params.validate(pool.len())?;
    let prob = Problem {
        design,
        labels: ds.labels(),
        loss,
        rho: params.rho,
    };
    let run = anneal(&prob, params, params.k, &[])?;
    let objective = prob.objective(&run.state);
    let (ensemble, selected) = build_ensemble(pool, &run.state, loss)?;
    Ok(FsaOutcome {
        ensemble,
        selected,
        intercept: run.state.intercept,
        bank: run.state.bank,
        objective,
        eta: run.eta,
        trace: run.trace,
    })
}

/// Snapshot iteration for each level: the last `e` whose schedule value
/// (with target `k_q`, the smallest level) is still at least `k_i`, or 1 if
/// the schedule drops below `k_i` immediately.
pub fn sparsity_snapshot_iterations(levels: &[usize], n_trees: usize, params: &FsaParams) -> Result<Vec<usize>> {
    if levels.is_empty() {
        return Err(Error::param("levels", "no sparsity levels given"));
    }
    if levels.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::param("levels", "sparsity levels must be strictly decreasing"));
    }
    let k_min = *levels.last().unwrap();
    if k_min < 1 || levels[0] > n_trees {
        return Err(Error::param(
            "levels",
            format!("levels must lie in 1..={n_trees}, got {levels:?}"),
        ));
    }
    let sched = (1..=params.n_iter)
        .map(|e| schedule(e, k_min, n_trees, params.n_iter, params.mu))
        .collect::<Result<Vec<_>>>()?;
    Ok(levels
        .iter()
        .map(|&k_i| {
            sched
                .iter()
                .rposition(|&m| m >= k_i)
                .map_or(1, |pos| pos + 1)
        })
        .collect())
}

/// One annealing pass producing a model for every level in `levels`
/// (strictly decreasing). Each snapshot is refined by
/// `params.refine_iterations()` gradient steps on its frozen support.
/// `params.k` is ignored; the schedule targets the smallest level.
pub fn fsa_multi_sparsity(
    pool: &TreePool,
    design: &LeafDesign,
    ds: &Dataset,
    loss: LossKind,
    params: &FsaParams,
    levels: &[usize],
) -> Result<MultiSparsityOutcome> {
    check_inputs(pool, design, ds, loss)?;
    let iters = sparsity_snapshot_iterations(levels, pool.len(), params)?;
    let k_min = *levels.last().unwrap();
    let main_params = FsaParams { k: k_min, ..params.clone() };
    main_params.validate(pool.len())?;
    let prob = Problem {
        design,
        labels: ds.labels(),
        loss,
        rho: params.rho,
    };
    let spec: Vec<(usize, usize)> = levels.iter().copied().zip(iters).collect();
    let run = anneal(&prob, &main_params, k_min, &spec)?;

    let refine = params.refine_iterations();
    let mut models: Vec<Option<LevelModel>> = vec![None; levels.len()];
    for snap in run.snapshots {
        let mut st = snap.state;
        let mut guard = DivergenceGuard::new(run.eta);
        let mut batcher = Batcher::new(params.batch, prob.n(), rng::derive_seed(params.seed, snap.level as u64));
        let mut before = prob.objective(&st);
        for _ in 0..refine {
            let batch = batcher.next();
            let (rows, scale) = match &batch {
                Some((b, s)) => (Some(b.as_slice()), *s),
                None => (None, 1.0),
            };
            prob.step(&mut st, guard.eta, rows, scale)?;
            let after = prob.objective(&st);
            guard.observe(before, after)?;
            before = after;
        }
        let (ensemble, selected) = build_ensemble(pool, &st, loss)?;
        models[snap.level] = Some(LevelModel {
            k: levels[snap.level],
            iteration: snap.iteration,
            ensemble,
            selected,
            intercept: st.intercept,
            objective: before,
        });
    }
    Ok(MultiSparsityOutcome {
        models: models
            .into_iter()
            .map(|m| m.expect("every level is snapshotted"))
            .collect(),
        main_iterations: params.n_iter,
        refine_passes: levels.len(),
        refine_iterations: levels.len() * refine,
    })
}

/// Penalized objective and its gradient at (`bank`, `intercept`) over every
/// group. The gradient is laid out like `bank` (flat, group after group).
pub fn leaf_objective_and_gradient(
    design: &LeafDesign,
    labels: &[f64],
    loss: LossKind,
    bank: &LeafWeightBank,
    intercept: f64,
    rho: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    if design.n_rows() != labels.len() || bank.n_groups() != design.n_trees() {
        return Err(Error::DimensionMismatch("bank, design and labels disagree".into()));
    }
    loss.check_labels(labels)?;
    let prob = Problem { design, labels, loss, rho };
    let mut full = bank.clone();
    let all: Vec<usize> = (0..bank.n_groups()).collect();
    full.retain(&all);
    // retain() zeroes nothing here since every group is kept.
    let mut st = State {
        bank: full,
        intercept,
        scores: vec![0.0; labels.len()],
    };
    let mut scores = std::mem::take(&mut st.scores);
    prob.fill_scores(&st.bank, intercept, &mut scores);
    st.scores = scores;
    let objective = prob.objective(&st);
    let (grads, gi) = prob.gradient(&st, &all, None, 1.0);
    Ok((objective, grads.concat(), gi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::BoostConfig;
    use crate::dataset::Task;
    use crate::pool::{compile_design, PoolStrategy};
    use crate::tree::{leaf, split, Provenance, Tree};

    fn pool_of(trees: Vec<Tree>) -> TreePool {
        let n = trees.len();
        TreePool {
            provenance: (0..n).map(|r| Provenance { chain: 0, round: r, depth_cap: 2 }).collect(),
            trees,
            master_seed: 0,
            strategy: PoolStrategy::Scsd { trees: n, depth: 2 },
            boost: BoostConfig::default(),
            config: None,
        }
    }

    fn stump(f: usize, t: f64) -> Tree {
        Tree::new(vec![split(f, t, 1, 2), leaf(0), leaf(1)], vec![0.0, 0.0], 2).unwrap()
    }

    fn regression_data() -> Dataset {
        let x: Vec<f64> = (0..20).flat_map(|i| [i as f64 / 20.0, ((i * 7) % 20) as f64 / 20.0]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 3.0 } + 0.1 * (i % 3) as f64).collect();
        Dataset::new(x, 2, y, Task::Regression, None).unwrap()
    }

    #[test]
    fn single_tree_converges_to_leaf_means() {
        let ds = regression_data();
        let pool = pool_of(vec![stump(0, 0.5)]);
        let design = compile_design(&pool, &ds).unwrap();
        let params = FsaParams { k: 1, n_iter: 2000, eta: 0.02, rho: 0.0, ..FsaParams::default() };
        let out = fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).unwrap();
        // With an intercept the split is over-parameterized; the fitted leaf
        // values plus intercept must equal the per-leaf means.
        for l in 0..2 {
            let rows = design.leaf_rows(0, l);
            let mean = rows.iter().map(|&r| ds.labels()[r as usize]).sum::<f64>() / rows.len() as f64;
            let fitted = out.intercept + out.bank.group(0)[l];
            assert!((fitted - mean).abs() < 1e-6, "leaf {l}: {fitted} vs {mean}");
        }
    }

    #[test]
    fn duplicate_trees_keep_one() {
        let ds = regression_data();
        let pool = pool_of(vec![stump(0, 0.5), stump(0, 0.5), stump(1, 0.5)]);
        let design = compile_design(&pool, &ds).unwrap();
        let params = FsaParams { k: 1, n_iter: 100, eta: 0.01, rho: 0.01, ..FsaParams::default() };
        let out = fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).unwrap();
        assert_eq!(out.selected, vec![0]);
        assert_eq!(out.ensemble.k(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = regression_data();
        let pool = pool_of(vec![stump(0, 0.5)]);
        let design = compile_design(&pool, &ds).unwrap();
        let params = FsaParams { k: 2, ..FsaParams::default() };
        assert!(fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).is_err());
        let empty = pool_of(vec![]);
        assert!(fsa_on_leaves(&empty, &design, &ds, LossKind::Square, &FsaParams { k: 1, ..params.clone() }).is_err());
        // logistic on regression targets
        assert!(fsa_on_leaves(&pool, &design, &ds, LossKind::Logistic, &FsaParams { k: 1, ..params }).is_err());
    }

    #[test]
    fn huge_step_is_reported_as_divergence() {
        let ds = regression_data();
        let pool = pool_of(vec![stump(0, 0.5), stump(1, 0.5)]);
        let design = compile_design(&pool, &ds).unwrap();
        let params = FsaParams { k: 1, n_iter: 200, eta: 5.0, rho: 0.0, ..FsaParams::default() };
        let err = fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn minibatch_runs_and_is_seed_deterministic() {
        let ds = regression_data();
        let pool = pool_of(vec![stump(0, 0.5), stump(1, 0.3), stump(1, 0.7)]);
        let design = compile_design(&pool, &ds).unwrap();
        let params = FsaParams {
            k: 2,
            n_iter: 200,
            eta: 0.005,
            rho: 0.01,
            batch: BatchMode::Minibatch { size: 8 },
            seed: 3,
            ..FsaParams::default()
        };
        let a = fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).unwrap();
        let b = fsa_on_leaves(&pool, &design, &ds, LossKind::Square, &params).unwrap();
        assert_eq!(a.bank, b.bank);
        assert!(a.selected.len() <= 2);
    }

    #[test]
    fn snapshot_iterations() {
        let params = FsaParams { n_iter: 100, mu: 10.0, ..FsaParams::default() };
        let e = sparsity_snapshot_iterations(&[50, 10, 1], 100, &params).unwrap();
        assert_eq!(*e.last().unwrap(), 100);
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
        // k_1 = M is above every scheduled value, so it snaps at iteration 1.
        assert_eq!(sparsity_snapshot_iterations(&[100, 1], 100, &params).unwrap()[0], 1);
        assert!(sparsity_snapshot_iterations(&[5, 5], 100, &params).is_err());
        assert!(sparsity_snapshot_iterations(&[101, 5], 100, &params).is_err());
    }
}
