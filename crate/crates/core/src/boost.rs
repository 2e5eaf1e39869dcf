//! Second-order gradient boosting: margin initialization, exact greedy tree
//! fitting on (gradient, Hessian) statistics, and sequential boosting chains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::tree::{CompactEnsemble, EnsembleMeta, Node, Provenance, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Every row starts at the loss-minimizing constant.
    ConstantBias,
    /// Every row starts at an independent standard normal draw.
    RandomMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub loss: LossKind,
    pub depth_cap: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub lambda_leaf: f64,
    pub init_mode: InitMode,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            depth_cap: 2,
            n_rounds: 100,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            lambda_leaf: 1.0,
            init_mode: InitMode::ConstantBias,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.loss.supports_newton() {
            return Err(Error::param(
                "loss",
                "hinge loss has no curvature and cannot drive Newton boosting",
            ));
        }
        if self.depth_cap < 1 {
            return Err(Error::param("depth_cap", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::param(
                "learning_rate",
                format!("{} is not in (0, 1]", self.learning_rate),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::param("min_samples_leaf", "must be >= 1"));
        }
        if !(self.lambda_leaf >= 0.0 && self.lambda_leaf.is_finite()) {
            return Err(Error::param("lambda_leaf", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginInit {
    pub margins: Vec<f64>,
    /// The shared constant in constant-bias mode.
    pub bias: Option<f64>,
    /// Set when a degenerate label set forced the logistic clamp.
    pub warning: Option<String>,
}

pub fn init_margins(ds: &Dataset, mode: InitMode, loss: LossKind, seed: u64) -> Result<MarginInit> {
    loss.check_labels(ds.labels())?;
    let n = ds.n_rows();
    Ok(match mode {
        InitMode::ConstantBias => {
            let (c, clamped) = loss.constant_bias(ds.labels());
            MarginInit {
                margins: vec![c; n],
                bias: Some(c),
                warning: clamped.then(|| {
                    format!("single-class labels: logistic bias clamped to {c:.6}")
                }),
            }
        }
        InitMode::RandomMargin => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            MarginInit {
                margins: (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
                bias: None,
                warning: None,
            }
        }
    })
}

/// Row order of every feature column, ascending by value (stable).
#[derive(Debug, Clone)]
pub struct FeatureOrder {
    sorted: Vec<Vec<u32>>,
}

impl FeatureOrder {
    pub fn new(ds: &Dataset) -> Self {
        let sorted = (0..ds.n_features())
            .map(|j| {
                let mut idx: Vec<u32> = (0..ds.n_rows() as u32).collect();
                idx.sort_by(|&a, &b| ds.value(a as usize, j).total_cmp(&ds.value(b as usize, j)));
                idx
            })
            .collect();
        Self { sorted }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_g: f64,
    left_h: f64,
    left_n: usize,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    node: usize,
    g: f64,
    h: f64,
    n: usize,
}

const NO_SLOT: u32 = u32::MAX;
const PAR_MIN_WORK: usize = 1 << 15;

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

#[inline]
fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Split point strictly between two consecutive distinct values.
#[inline]
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Best split of every frontier slot along one feature. Within the feature,
/// the lowest threshold wins ties.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    ds: &Dataset,
    order: &[u32],
    feature: usize,
    slot_of: &[u32],
    frontier: &[Pending],
    grads: &[f64],
    hess: &[f64],
    min_leaf: usize,
    lambda: f64,
) -> Vec<Option<Candidate>> {
    let k = frontier.len();
    let mut acc_g = vec![0.0; k];
    let mut acc_h = vec![0.0; k];
    let mut acc_n = vec![0usize; k];
    let mut last = vec![f64::NAN; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let parent: Vec<f64> = frontier.iter().map(|p| score(p.g, p.h, lambda)).collect();
    for &r in order {
        let r = r as usize;
        let s = slot_of[r];
        if s == NO_SLOT {
            continue;
        }
        let s = s as usize;
        let v = ds.value(r, feature);
        if acc_n[s] > 0 && v > last[s] {
            let p = &frontier[s];
            let (nl, nr) = (acc_n[s], p.n - acc_n[s]);
            if nl >= min_leaf && nr >= min_leaf {
                let (gl, hl) = (acc_g[s], acc_h[s]);
                let gain = score(gl, hl, lambda) + score(p.g - gl, p.h - hl, lambda) - parent[s];
                if best[s].is_none_or(|b| gain > b.gain) {
                    best[s] = Some(Candidate {
                        gain,
                        feature,
                        threshold: midpoint(last[s], v),
                        left_g: gl,
                        left_h: hl,
                        left_n: nl,
                    });
                }
            }
        }
        acc_g[s] += grads[r];
        acc_h[s] += hess[r];
        acc_n[s] += 1;
        last[s] = v;
    }
    best
}

/// Greedy depth-wise tree on per-row gradient statistics. Each split
/// maximizes `GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)`; leaves take the
/// Newton value `-G/(H+l)`.
pub fn fit_tree(
    ds: &Dataset,
    grads: &[f64],
    hessians: &[f64],
    depth_cap: usize,
    config: &BoostConfig,
) -> Result<Tree> {
    fit_tree_with_order(ds, &FeatureOrder::new(ds), grads, hessians, depth_cap, config)
}

pub fn fit_tree_with_order(
    ds: &Dataset,
    order: &FeatureOrder,
    grads: &[f64],
    hessians: &[f64],
    depth_cap: usize,
    config: &BoostConfig,
) -> Result<Tree> {
    let n = ds.n_rows();
    if grads.len() != n || hessians.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} gradients / {} hessians for {n} rows",
            grads.len(),
            hessians.len()
        )));
    }
    if n == 0 || n < config.min_samples_leaf {
        return Err(Error::Data(format!(
            "{n} rows cannot satisfy min_samples_leaf={}",
            config.min_samples_leaf
        )));
    }
    if let Some(i) = (0..n).find(|&i| !grads[i].is_finite() || !(hessians[i].is_finite() && hessians[i] >= 0.0)) {
        return Err(Error::Numerical(format!(
            "invalid gradient statistics at row {i}: g={}, h={}",
            grads[i], hessians[i]
        )));
    }
    let lambda = config.lambda_leaf;
    let min_leaf = config.min_samples_leaf.max(1);

    // Node ids are assigned breadth-first; `None` marks a node whose fate
    // (leaf or split) is still open.
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut leaf_values: Vec<(usize, f64)> = Vec::new();
    let mut slot_of = vec![0u32; n];
    let mut frontier = vec![Pending {
        node: 0,
        g: grads.iter().sum(),
        h: hessians.iter().sum(),
        n,
    }];

    let mut depth = 0;
    while !frontier.is_empty() {
        let splittable: Vec<bool> = frontier
            .iter()
            .map(|p| depth < depth_cap && p.n >= 2 * min_leaf)
            .collect();
        let best: Vec<Option<Candidate>> = if splittable.iter().any(|&b| b) {
            let scan = |j: usize| {
                scan_feature(ds, &order.sorted[j], j, &slot_of, &frontier, grads, hessians, min_leaf, lambda)
            };
            let per_feature: Vec<Vec<Option<Candidate>>> = if n * ds.n_features() >= PAR_MIN_WORK {
                (0..ds.n_features()).into_par_iter().map(scan).collect()
            } else {
                (0..ds.n_features()).map(scan).collect()
            };
            // Reduce in feature order: the lowest feature index wins ties.
            (0..frontier.len())
                .map(|s| {
                    per_feature
                        .iter()
                        .filter_map(|f| f[s])
                        .fold(None, |acc: Option<Candidate>, c| match acc {
                            Some(a) if c.gain <= a.gain => Some(a),
                            _ => Some(c),
                        })
                })
                .collect()
        } else {
            vec![None; frontier.len()]
        };

        let mut next = Vec::new();
        let mut remap = vec![NO_SLOT; frontier.len() * 2];
        let mut chosen: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for (s, p) in frontier.iter().enumerate() {
            let parent = score(p.g, p.h, lambda);
            let accept = splittable[s]
                && best[s].is_some_and(|c| c.gain > 1e-12 * parent.max(f64::MIN_POSITIVE) && c.gain > 0.0);
            if accept {
                let c = best[s].unwrap();
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(None);
                nodes.push(None);
                nodes[p.node] = Some(Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: l,
                    right: r,
                });
                remap[2 * s] = next.len() as u32;
                next.push(Pending { node: l, g: c.left_g, h: c.left_h, n: c.left_n });
                remap[2 * s + 1] = next.len() as u32;
                next.push(Pending {
                    node: r,
                    g: p.g - c.left_g,
                    h: p.h - c.left_h,
                    n: p.n - c.left_n,
                });
                chosen[s] = Some(c);
            } else {
                nodes[p.node] = Some(Node::Leaf { leaf: usize::MAX });
                leaf_values.push((p.node, leaf_value(p.g, p.h, lambda)));
            }
        }
        for (r, slot) in slot_of.iter_mut().enumerate() {
            if *slot == NO_SLOT {
                continue;
            }
            let s = *slot as usize;
            *slot = match chosen[s] {
                Some(c) => {
                    let right = ds.value(r, c.feature) >= c.threshold;
                    remap[2 * s + right as usize]
                }
                None => NO_SLOT,
            };
        }
        frontier = next;
        depth += 1;
    }

    let mut nodes: Vec<Node> = nodes.into_iter().map(|n| n.expect("every node resolved")).collect();
    let values: std::collections::HashMap<usize, f64> = leaf_values.into_iter().collect();
    // Number leaves left-to-right.
    let mut weights = Vec::with_capacity(values.len());
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        match nodes[id] {
            Node::Leaf { .. } => {
                nodes[id] = Node::Leaf { leaf: weights.len() };
                weights.push(values[&id]);
            }
            Node::Split { left, right, .. } => {
                stack.push(right);
                stack.push(left);
            }
        }
    }
    Tree::new(nodes, weights, depth_cap)
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub trees: Vec<Tree>,
    pub provenance: Vec<Provenance>,
    pub init: MarginInit,
    pub margins: Vec<f64>,
    pub loss: LossKind,
}

impl ChainOutput {
    /// Plain boosting model made of the first `k` trees plus the constant bias.
    pub fn prefix_ensemble(&self, k: usize) -> Result<CompactEnsemble> {
        let bias = self.init.bias.ok_or_else(|| {
            Error::Config("random-margin chains have no usable bias for prediction".into())
        })?;
        if k == 0 || k > self.trees.len() {
            return Err(Error::param(
                "k",
                format!("prefix of {k} trees from a chain of {}", self.trees.len()),
            ));
        }
        CompactEnsemble::new(
            self.trees[..k].to_vec(),
            self.provenance[..k].to_vec(),
            bias,
            self.loss,
            EnsembleMeta {
                strategy: Some("gradient-boost".into()),
                source_ids: (0..k).collect(),
                ..EnsembleMeta::default()
            },
        )
    }
}

/// Callback receiving the round index and the margins after that round.
pub type RoundHook<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// One boosting chain; provenance is tagged with chain id 0.
pub fn run_chain(ds: &Dataset, config: &BoostConfig) -> Result<ChainOutput> {
    run_chain_indexed(ds, config, 0, None)
}

/// Boosting chain with an explicit chain id. `on_round` (if any) is called
/// with the margins after every round.
pub fn run_chain_indexed(
    ds: &Dataset,
    config: &BoostConfig,
    chain: usize,
    mut on_round: Option<RoundHook<'_>>,
) -> Result<ChainOutput> {
    config.validate()?;
    let loss = config.loss;
    let init = init_margins(ds, config.init_mode, loss, config.seed)?;
    let mut margins = init.margins.clone();
    let order = FeatureOrder::new(ds);
    let labels = ds.labels();
    let n = ds.n_rows();
    let mut grads = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut provenance = Vec::with_capacity(config.n_rounds);
    for round in 0..config.n_rounds {
        for i in 0..n {
            let e = loss.eval_unchecked(margins[i], labels[i]);
            grads[i] = e.grad;
            hess[i] = e.hess;
        }
        let mut tree = fit_tree_with_order(ds, &order, &grads, &hess, config.depth_cap, config)?;
        tree.scale_weights(config.learning_rate);
        for (i, x) in ds.rows().enumerate() {
            margins[i] += tree.predict_unchecked(x);
        }
        if let Some(cb) = on_round.as_deref_mut() {
            cb(round, &margins);
        }
        trees.push(tree);
        provenance.push(Provenance {
            chain,
            round,
            depth_cap: config.depth_cap,
        });
    }
    Ok(ChainOutput {
        trees,
        provenance,
        init,
        margins,
        loss,
    })
}
