//! Tree pools grown by one or many boosting chains, and the compiled
//! row-by-tree leaf-membership table used by the selection step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{run_chain_indexed, BoostConfig, InitMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{Provenance, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PoolStrategy {
    /// One constant-bias chain of `trees` rounds.
    Scsd { trees: usize, depth: usize },
    /// `chains` random-margin chains of `trees / chains` rounds each.
    Mcsd {
        trees: usize,
        chains: usize,
        depth: usize,
    },
    /// Like MCSD, with `chains / depths.len()` chains per depth.
    Mcmd {
        trees: usize,
        chains: usize,
        depths: Vec<usize>,
    },
}

impl PoolStrategy {
    pub fn total_trees(&self) -> usize {
        match *self {
            PoolStrategy::Scsd { trees, .. }
            | PoolStrategy::Mcsd { trees, .. }
            | PoolStrategy::Mcmd { trees, .. } => trees,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PoolStrategy::Scsd { .. } => "scsd",
            PoolStrategy::Mcsd { .. } => "mcsd",
            PoolStrategy::Mcmd { .. } => "mcmd",
        }
    }

    pub fn is_single_chain(&self) -> bool {
        matches!(self, PoolStrategy::Scsd { .. })
    }

    /// Depth caps that occur in the pool, ascending.
    pub fn depths(&self) -> Vec<usize> {
        match self {
            PoolStrategy::Scsd { depth, .. } | PoolStrategy::Mcsd { depth, .. } => vec![*depth],
            PoolStrategy::Mcmd { depths, .. } => {
                let mut d = depths.clone();
                d.sort_unstable();
                d
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need_depth = |d: usize| {
            if d == 0 {
                Err(Error::param("depth", "tree depth must be >= 1"))
            } else {
                Ok(())
            }
        };
        match self {
            PoolStrategy::Scsd { trees, depth } => {
                if *trees == 0 {
                    return Err(Error::param("trees", "pool needs at least one tree"));
                }
                need_depth(*depth)
            }
            PoolStrategy::Mcsd { trees, chains, depth } => {
                check_chains(*trees, *chains)?;
                need_depth(*depth)
            }
            PoolStrategy::Mcmd { trees, chains, depths } => {
                check_chains(*trees, *chains)?;
                if depths.is_empty() {
                    return Err(Error::param("depths", "depth set is empty"));
                }
                let mut uniq = depths.clone();
                uniq.sort_unstable();
                uniq.dedup();
                if uniq.len() != depths.len() {
                    return Err(Error::param("depths", "depth set has duplicates"));
                }
                if chains % depths.len() != 0 {
                    return Err(Error::param(
                        "chains",
                        format!("{chains} chains cannot be shared equally by {} depths", depths.len()),
                    ));
                }
                depths.iter().try_for_each(|&d| need_depth(d))
            }
        }
    }

    /// (depth cap, init mode, rounds) for every chain, in chain-id order.
    fn chain_plan(&self) -> Vec<(usize, InitMode, usize)> {
        match self {
            PoolStrategy::Scsd { trees, depth } => vec![(*depth, InitMode::ConstantBias, *trees)],
            PoolStrategy::Mcsd { trees, chains, depth } => {
                vec![(*depth, InitMode::RandomMargin, trees / chains); *chains]
            }
            PoolStrategy::Mcmd { trees, chains, depths } => {
                let per_depth = chains / depths.len();
                (0..*chains)
                    .map(|c| (depths[c / per_depth], InitMode::RandomMargin, trees / chains))
                    .collect()
            }
        }
    }
}

fn check_chains(trees: usize, chains: usize) -> Result<()> {
    if chains == 0 || trees == 0 {
        return Err(Error::param("chains", "need at least one chain and one tree"));
    }
    if !trees.is_multiple_of(chains) {
        return Err(Error::param(
            "trees",
            format!("{trees} trees are not divisible into {chains} chains"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePool {
    pub trees: Vec<Tree>,
    pub provenance: Vec<Provenance>,
    pub master_seed: u64,
    pub strategy: PoolStrategy,
    pub boost: BoostConfig,
    pub config: Option<serde_json::Value>,
}

impl TreePool {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn check_dimension(&self, n_features: usize) -> Result<()> {
        self.trees.iter().try_for_each(|t| t.check_dimension(n_features))
    }
}

/// Seed of chain `chain` under `master_seed`.
pub fn chain_seed(master_seed: u64, chain: usize) -> u64 {
    rng::derive_seed(master_seed, rng::stream::CHAIN_BASE + chain as u64)
}

/// Grows the pool. Chains run in parallel; each chain is sequential and
/// seeded from `(master_seed, chain id)`, so the pool does not depend on the
/// thread count. `boost` supplies loss, learning rate, damping and leaf size;
/// its depth, rounds, init mode and seed are overridden per chain.
pub fn generate_pool(
    ds: &Dataset,
    strategy: &PoolStrategy,
    boost: &BoostConfig,
    master_seed: u64,
) -> Result<TreePool> {
    strategy.validate()?;
    let plan = strategy.chain_plan();
    let chains: Vec<Result<(Vec<Tree>, Vec<Provenance>)>> = plan
        .par_iter()
        .enumerate()
        .map(|(c, &(depth, init_mode, rounds))| {
            let cfg = BoostConfig {
                depth_cap: depth,
                n_rounds: rounds,
                init_mode,
                seed: chain_seed(master_seed, c),
                ..boost.clone()
            };
            let out = run_chain_indexed(ds, &cfg, c, None)?;
            Ok((out.trees, out.provenance))
        })
        .collect();
    let mut trees = Vec::with_capacity(strategy.total_trees());
    let mut provenance = Vec::with_capacity(strategy.total_trees());
    for chain in chains {
        let (t, p) = chain?;
        trees.extend(t);
        provenance.extend(p);
    }
    Ok(TreePool {
        trees,
        provenance,
        master_seed,
        strategy: strategy.clone(),
        boost: boost.clone(),
        config: None,
    })
}

/// `leaf[j * N + i]` is the leaf of tree `j` reached by row `i`; the
/// inverted index lists, per (tree, leaf), the rows landing there.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDesign {
    n_rows: usize,
    leaf: Vec<u32>,
    n_leaves: Vec<usize>,
    /// Per tree: CSR offsets over leaves into `rows`.
    offsets: Vec<Vec<usize>>,
    rows: Vec<Vec<u32>>,
}

impl LeafDesign {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_trees(&self) -> usize {
        self.n_leaves.len()
    }

    pub fn n_leaves(&self) -> &[usize] {
        &self.n_leaves
    }

    /// Leaf ordinals of tree `j` for every row.
    pub fn tree_column(&self, j: usize) -> &[u32] {
        &self.leaf[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn leaf_of(&self, row: usize, tree: usize) -> usize {
        self.leaf[tree * self.n_rows + row] as usize
    }

    /// Rows of tree `j` that land in `leaf`.
    pub fn leaf_rows(&self, j: usize, leaf: usize) -> &[u32] {
        &self.rows[j][self.offsets[j][leaf]..self.offsets[j][leaf + 1]]
    }

    /// Prediction of a weight assignment through the table, per row.
    pub fn predict(&self, weights: &[&[f64]], intercept: f64) -> Vec<f64> {
        let mut out = vec![intercept; self.n_rows];
        for (j, w) in weights.iter().enumerate() {
            for (o, &l) in out.iter_mut().zip(self.tree_column(j)) {
                *o += w[l as usize];
            }
        }
        out
    }
}

pub fn compile_design(pool: &TreePool, ds: &Dataset) -> Result<LeafDesign> {
    compile_trees(&pool.trees, ds)
}

pub fn compile_trees(trees: &[Tree], ds: &Dataset) -> Result<LeafDesign> {
    trees.iter().try_for_each(|t| t.check_dimension(ds.n_features()))?;
    let n = ds.n_rows();
    let per_tree: Vec<(Vec<u32>, Vec<usize>, Vec<u32>)> = trees
        .par_iter()
        .map(|t| {
            let col: Vec<u32> = ds.rows().map(|x| t.leaf_index_unchecked(x) as u32).collect();
            let mut offsets = vec![0usize; t.n_leaves() + 1];
            for &l in &col {
                offsets[l as usize + 1] += 1;
            }
            for l in 0..t.n_leaves() {
                offsets[l + 1] += offsets[l];
            }
            let mut fill = offsets.clone();
            let mut rows = vec![0u32; n];
            for (i, &l) in col.iter().enumerate() {
                rows[fill[l as usize]] = i as u32;
                fill[l as usize] += 1;
            }
            (col, offsets, rows)
        })
        .collect();
    let mut leaf = Vec::with_capacity(n * trees.len());
    let mut offsets = Vec::with_capacity(trees.len());
    let mut rows = Vec::with_capacity(trees.len());
    for (c, o, r) in per_tree {
        leaf.extend(c);
        offsets.push(o);
        rows.push(r);
    }
    Ok(LeafDesign {
        n_rows: n,
        leaf,
        n_leaves: trees.iter().map(Tree::n_leaves).collect(),
        offsets,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::loss::LossKind;
    use rand::{Rng, SeedableRng};

    fn xor(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let y = (0..n)
            .map(|i| if (x[2 * i] >= 0.5) != (x[2 * i + 1] >= 0.5) { 1.0 } else { -1.0 })
            .collect();
        Dataset::new(x, 2, y, Task::BinaryClassification, None).unwrap()
    }

    fn boost() -> BoostConfig {
        BoostConfig { loss: LossKind::Logistic, ..BoostConfig::default() }
    }

    #[test]
    fn mcmd_plan_assigns_equal_chains_per_depth() {
        let s = PoolStrategy::Mcmd { trees: 3000, chains: 30, depths: (2..=7).collect() };
        s.validate().unwrap();
        let plan = s.chain_plan();
        assert_eq!(plan.len(), 30);
        for d in 2..=7 {
            assert_eq!(plan.iter().filter(|p| p.0 == d).count(), 5);
        }
        assert!(plan.iter().all(|p| p.2 == 100 && p.1 == InitMode::RandomMargin));
        let s = PoolStrategy::Scsd { trees: 3000, depth: 3 };
        assert_eq!(s.chain_plan(), vec![(3, InitMode::ConstantBias, 3000)]);
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(PoolStrategy::Mcsd { trees: 10, chains: 3, depth: 2 }.validate().is_err());
        assert!(PoolStrategy::Mcmd { trees: 12, chains: 4, depths: vec![2, 3, 4] }.validate().is_err());
        assert!(PoolStrategy::Mcmd { trees: 12, chains: 3, depths: vec![] }.validate().is_err());
        assert!(PoolStrategy::Scsd { trees: 0, depth: 2 }.validate().is_err());
    }

    #[test]
    fn mcsd_chains_differ() {
        let ds = xor(100, 3);
        let pool = generate_pool(&ds, &PoolStrategy::Mcsd { trees: 4, chains: 2, depth: 2 }, &boost(), 9).unwrap();
        assert_eq!(pool.len(), 4);
        assert_eq!(pool.provenance[2].chain, 1);
        assert_eq!(pool.provenance[2].round, 0);
        assert!(!pool.trees[0].same_structure(&pool.trees[2]));
    }

    #[test]
    fn pool_is_identical_across_thread_counts() {
        let ds = xor(80, 4);
        let s = PoolStrategy::Mcmd { trees: 24, chains: 6, depths: vec![2, 3, 4] };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| generate_pool(&ds, &s, &boost(), 77).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn design_of_root_only_tree() {
        let ds = xor(10, 1);
        let d = compile_trees(&[Tree::constant(0.0, 1)], &ds).unwrap();
        assert!(d.tree_column(0).iter().all(|&l| l == 0));
        assert_eq!(d.leaf_rows(0, 0).len(), 10);
    }

    #[test]
    fn design_matches_tree_routing() {
        let ds = xor(100, 5);
        let pool = generate_pool(&ds, &PoolStrategy::Scsd { trees: 400, depth: 2 }, &boost(), 1).unwrap();
        let d = compile_design(&pool, &ds).unwrap();
        assert_eq!((d.n_rows(), d.n_trees()), (100, 400));
        let weights: Vec<&[f64]> = pool.trees.iter().map(Tree::leaf_weights).collect();
        let via_design = d.predict(&weights, 0.25);
        for (i, x) in ds.rows().enumerate() {
            let direct: f64 = 0.25 + pool.trees.iter().map(|t| t.predict(x).unwrap()).sum::<f64>();
            assert!((direct - via_design[i]).abs() < 1e-12);
        }
        for j in [0, 17, 399] {
            let mut seen = 0;
            for l in 0..d.n_leaves()[j] {
                for &r in d.leaf_rows(j, l) {
                    assert_eq!(d.leaf_of(r as usize, j), l);
                    seen += 1;
                }
            }
            assert_eq!(seen, 100);
        }
    }

    #[test]
    fn design_rejects_dimension_mismatch() {
        let wide = Dataset::new(vec![0.0, 1.0, 2.0], 3, vec![1.0], Task::BinaryClassification, None).unwrap();
        let t = Tree::new(
            vec![crate::tree::split(2, 0.5, 1, 2), crate::tree::leaf(0), crate::tree::leaf(1)],
            vec![0.0, 0.0],
            1,
        )
        .unwrap();
        let narrow = xor(5, 1);
        assert!(compile_trees(std::slice::from_ref(&t), &narrow).is_err());
        assert!(compile_trees(&[t], &wide).is_ok());
    }
}
