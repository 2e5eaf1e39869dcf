//! Binary decision trees over real features, decomposed into a routing
//! structure (the index function) and a ragged vector of leaf weights.
//!
//! Routing is fixed: `x[feature] < threshold` goes left, everything else
//! (including ties) goes right. Leaves carry ordinals `0..n_leaves` with no
//! padding, so `leaf_weights()[leaf_index(x)]` is the tree output.

pub mod doc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    leaf_weights: Vec<f64>,
    depth_cap: usize,
    max_feature: Option<usize>,
}

impl Tree {
    /// Builds a tree from a node array rooted at index 0 and validates it.
    pub fn new(nodes: Vec<Node>, leaf_weights: Vec<f64>, depth_cap: usize) -> Result<Self> {
        let max_feature = validate(&nodes, &leaf_weights, depth_cap)?;
        Ok(Self {
            nodes,
            leaf_weights,
            depth_cap,
            max_feature,
        })
    }

    /// One-leaf tree predicting `weight` everywhere.
    pub fn constant(weight: f64, depth_cap: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { leaf: 0 }],
            leaf_weights: vec![weight],
            depth_cap,
            max_feature: None,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_weights(&self) -> &[f64] {
        &self.leaf_weights
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_weights.len()
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    /// Largest feature index referenced by any split.
    pub fn max_feature(&self) -> Option<usize> {
        self.max_feature
    }

    /// Length of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { .. } => best = best.max(d),
                Node::Split { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
            }
        }
        best
    }

    /// Same structure, new leaf weights.
    pub fn with_leaf_weights(&self, weights: Vec<f64>) -> Result<Tree> {
        if weights.len() != self.n_leaves() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a tree with {} leaves",
                weights.len(),
                self.n_leaves()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::MalformedTree("non-finite leaf weight".into()));
        }
        Ok(Tree {
            leaf_weights: weights,
            ..self.clone()
        })
    }

    pub fn scale_weights(&mut self, factor: f64) {
        for w in &mut self.leaf_weights {
            *w *= factor;
        }
    }

    /// Whether two trees route every input identically (same splits, same
    /// leaf numbering); weights are ignored.
    pub fn same_structure(&self, other: &Tree) -> bool {
        self.nodes == other.nodes
    }

    /// Ordinal of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        if let Some(j) = self.max_feature {
            if j >= x.len() {
                return Err(Error::DimensionMismatch(format!(
                    "tree splits on feature {j} but input has {} features",
                    x.len()
                )));
            }
        }
        Ok(self.leaf_index_unchecked(x))
    }

    /// [`Tree::leaf_index`] for inputs already known to cover `max_feature`.
    #[inline]
    pub fn leaf_index_unchecked(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { leaf } => return leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.leaf_weights[self.leaf_index(x)?])
    }

    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.leaf_weights[self.leaf_index_unchecked(x)]
    }

    /// Checks that every split references a feature below `n_features`.
    pub fn check_dimension(&self, n_features: usize) -> Result<()> {
        match self.max_feature {
            Some(j) if j >= n_features => Err(Error::DimensionMismatch(format!(
                "tree splits on feature {j} but data has {n_features} features"
            ))),
            _ => Ok(()),
        }
    }
}

fn validate(nodes: &[Node], weights: &[f64], depth_cap: usize) -> Result<Option<usize>> {
    if nodes.is_empty() {
        return Err(Error::MalformedTree("tree has no nodes".into()));
    }
    let mut visited = vec![false; nodes.len()];
    let mut leaf_seen = vec![false; weights.len()];
    let mut max_feature = None;
    let mut stack = vec![(0usize, 0usize)];
    while let Some((id, depth)) = stack.pop() {
        if id >= nodes.len() {
            return Err(Error::MalformedTree(format!("child id {id} out of range")));
        }
        if std::mem::replace(&mut visited[id], true) {
            return Err(Error::MalformedTree(format!("node {id} reached twice")));
        }
        if depth > depth_cap {
            return Err(Error::MalformedTree(format!(
                "node {id} at depth {depth} exceeds depth cap {depth_cap}"
            )));
        }
        match nodes[id] {
            Node::Leaf { leaf } => {
                if leaf >= weights.len() || std::mem::replace(&mut leaf_seen[leaf], true) {
                    return Err(Error::MalformedTree(format!(
                        "leaf ordinal {leaf} invalid or duplicated"
                    )));
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if !threshold.is_finite() {
                    return Err(Error::MalformedTree(format!("non-finite threshold at node {id}")));
                }
                max_feature = Some(max_feature.map_or(feature, |m: usize| m.max(feature)));
                stack.push((right, depth + 1));
                stack.push((left, depth + 1));
            }
        }
    }
    if let Some(orphan) = visited.iter().position(|v| !v) {
        return Err(Error::MalformedTree(format!("node {orphan} unreachable from root")));
    }
    if let Some(missing) = leaf_seen.iter().position(|v| !v) {
        return Err(Error::MalformedTree(format!("leaf ordinal {missing} has no node")));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::MalformedTree("non-finite leaf weight".into()));
    }
    Ok(max_feature)
}

/// Where a pooled tree came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub chain: usize,
    pub round: usize,
    pub depth_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    /// Pool ids of the member trees, aligned with `trees`.
    pub source_ids: Vec<usize>,
    /// Resolved run configuration that produced the model.
    pub config: Option<serde_json::Value>,
}

/// Deployable model: `f(x) = intercept + sum_j tree_j(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactEnsemble {
    trees: Vec<Tree>,
    provenance: Vec<Provenance>,
    intercept: f64,
    loss: LossKind,
    pub meta: EnsembleMeta,
}

impl CompactEnsemble {
    pub fn new(
        trees: Vec<Tree>,
        provenance: Vec<Provenance>,
        intercept: f64,
        loss: LossKind,
        meta: EnsembleMeta,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Data("ensemble needs at least one tree".into()));
        }
        if provenance.len() != trees.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} provenance records for {} trees",
                provenance.len(),
                trees.len()
            )));
        }
        if !intercept.is_finite() {
            return Err(Error::Numerical("non-finite intercept".into()));
        }
        Ok(Self {
            trees,
            provenance,
            intercept,
            loss,
            meta,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn k(&self) -> usize {
        self.trees.len()
    }

    pub fn check_dimension(&self, n_features: usize) -> Result<()> {
        self.trees.iter().try_for_each(|t| t.check_dimension(n_features))
    }

    /// Raw score. Classification callers take the sign for labels.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut s = self.intercept;
        for t in &self.trees {
            s += t.predict(x)?;
        }
        Ok(s)
    }

    /// Scores for every row of a row-major matrix with `n_features` columns.
    pub fn predict_rows(&self, features: &[f64], n_features: usize) -> Result<Vec<f64>> {
        if n_features == 0 || !features.len().is_multiple_of(n_features) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of {n_features} features",
                features.len()
            )));
        }
        self.check_dimension(n_features)?;
        Ok(features
            .chunks_exact(n_features)
            .map(|x| {
                self.trees
                    .iter()
                    .fold(self.intercept, |s, t| s + t.predict_unchecked(x))
            })
            .collect())
    }

    pub fn predict_dataset(&self, ds: &crate::dataset::Dataset) -> Result<Vec<f64>> {
        self.predict_rows(ds.features(), ds.n_features())
    }
}

/// Builder-side helper: split node.
pub fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
    Node::Split {
        feature,
        threshold,
        left,
        right,
    }
}

pub fn leaf(leaf: usize) -> Node {
    Node::Leaf { leaf }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    /// Random binary tree over two features in [0, 1]^2 whose thresholds fall
    /// strictly inside each leaf's box, so every leaf owns a non-empty region.
    fn arb_tree() -> impl Strategy<Value = Tree> {
        proptest::collection::vec((0usize..2, 0.05f64..0.95, any::<bool>()), 1..7).prop_map(|splits| {
            let mut nodes = vec![leaf(0)];
            let mut boxes = vec![[(0.0f64, 1.0f64); 2]];
            let mut n_leaves = 1;
            for (f, t, which) in splits {
                let leaves: Vec<usize> = nodes
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| matches!(n, Node::Leaf { .. }))
                    .map(|(i, _)| i)
                    .collect();
                let target = if which { leaves[0] } else { *leaves.last().unwrap() };
                let Node::Leaf { leaf: old } = nodes[target] else { unreachable!() };
                let bx = boxes[target];
                let (lo, hi) = bx[f];
                let thr = lo + t * (hi - lo);
                let (mut lbox, mut rbox) = (bx, bx);
                lbox[f] = (lo, thr);
                rbox[f] = (thr, hi);
                let l = nodes.len();
                nodes.push(leaf(old));
                nodes.push(leaf(n_leaves));
                boxes.push(lbox);
                boxes.push(rbox);
                n_leaves += 1;
                nodes[target] = split(f, thr, l, l + 1);
            }
            let weights = (0..n_leaves).map(|i| i as f64).collect();
            Tree::new(nodes, weights, 16).unwrap()
        })
    }

    proptest! {
        #[test]
        fn index_function_is_one_hot(t in arb_tree(), x in proptest::collection::vec(0.0f64..1.0, 2)) {
            let hits = (0..t.n_leaves()).filter(|&l| t.leaf_index(&x).unwrap() == l).count();
            prop_assert_eq!(hits, 1);
            prop_assert!(t.n_leaves() <= 1 << t.depth());
        }

        #[test]
        fn leaf_count_matches_refined_grid(t in arb_tree()) {
            // Refine past every threshold: all thresholds plus midpoints.
            let mut cuts: Vec<Vec<f64>> = vec![vec![-1.0, 2.0]; 2];
            for n in t.nodes() {
                if let Node::Split { feature, threshold, .. } = *n {
                    cuts[feature].push(threshold);
                }
            }
            let grid: Vec<Vec<f64>> = cuts.into_iter().map(|mut c| {
                c.sort_by(f64::total_cmp);
                c.dedup();
                let mut g: Vec<f64> = c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                g.extend(c);
                g
            }).collect();
            let mut seen = std::collections::BTreeSet::new();
            for &a in &grid[0] {
                for &b in &grid[1] {
                    seen.insert(t.leaf_index(&[a, b]).unwrap());
                }
            }
            prop_assert_eq!(seen.len(), t.n_leaves());
        }

        #[test]
        fn piecewise_constant_off_thresholds(t in arb_tree(), x in proptest::collection::vec(0.0f64..1.0, 2), eps in -1e-9f64..1e-9) {
            let near = t.nodes().iter().any(|n| matches!(n, Node::Split { feature, threshold, .. } if (x[*feature] - threshold).abs() < 2e-9));
            prop_assume!(!near);
            let y = vec![x[0] + eps, x[1] - eps];
            prop_assert_eq!(t.predict(&x).unwrap(), t.predict(&y).unwrap());
        }
    }
}
