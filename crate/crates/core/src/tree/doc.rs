//! JSON documents for models and pools.
//!
//! Every document carries `format` (`"ret-model"` or `"ret-pool"`) and
//! `version`. Output is canonical: fixed field order, sorted keys inside
//! free-form config objects, and shortest round-trip decimals for floats,
//! so serialize -> parse -> serialize is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompactEnsemble, EnsembleMeta, Node, Provenance, Tree};
use crate::boost::BoostConfig;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::pool::{PoolStrategy, TreePool};

pub const DOC_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "ret-model";
pub const POOL_FORMAT: &str = "ret-pool";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum NodeDoc {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    loss: LossKind,
    #[serde(default)]
    intercept: f64,
    #[serde(default)]
    meta: EnsembleMeta,
    trees: Vec<TreeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    format: String,
    version: u32,
    master_seed: u64,
    strategy: PoolStrategy,
    boost: BoostConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    trees: Vec<TreeDoc>,
}

fn tree_to_doc(tree: &Tree, provenance: Option<Provenance>) -> TreeDoc {
    let nodes = tree
        .nodes()
        .iter()
        .map(|n| match *n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => NodeDoc::Split {
                feature,
                threshold,
                left,
                right,
            },
            Node::Leaf { leaf } => NodeDoc::Leaf {
                leaf,
                weight: tree.leaf_weights()[leaf],
            },
        })
        .collect();
    TreeDoc {
        depth_cap: Some(tree.depth_cap()),
        provenance,
        nodes,
    }
}

fn tree_from_doc(doc: &TreeDoc) -> Result<Tree> {
    let n_leaves = doc.nodes.iter().filter(|n| matches!(n, NodeDoc::Leaf { .. })).count();
    let mut weights = vec![f64::NAN; n_leaves];
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in &doc.nodes {
        match *n {
            NodeDoc::Split {
                feature,
                threshold,
                left,
                right,
            } => nodes.push(Node::Split {
                feature,
                threshold,
                left,
                right,
            }),
            NodeDoc::Leaf { leaf, weight } => {
                if leaf >= n_leaves {
                    return Err(Error::MalformedTree(format!(
                        "leaf ordinal {leaf} out of range for {n_leaves} leaves"
                    )));
                }
                weights[leaf] = weight;
                nodes.push(Node::Leaf { leaf });
            }
        }
    }
    // Without an explicit cap, the tree's own depth is the cap.
    let cap = match doc.depth_cap {
        Some(c) => c,
        None => Tree::new(nodes.clone(), weights.clone(), usize::MAX)?.depth(),
    };
    Tree::new(nodes, weights, cap)
}

fn parse_header(text: &str, expected_format: &str) -> Result<serde_json::Value> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("document must be a JSON object".into()))?;
    let version = obj
        .get("version")
        .ok_or_else(|| Error::Schema("missing version field".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| Error::Schema("version must be a non-negative integer".into()))?;
    if version != u64::from(DOC_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: DOC_VERSION,
        });
    }
    match obj.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == expected_format => Ok(value),
        Some(f) => Err(Error::Schema(format!("expected a {expected_format} document, found {f}"))),
        None => Err(Error::Schema("missing format field".into())),
    }
}

fn to_canonical<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents always serialize");
    s.push('\n');
    s
}

pub fn model_to_string(model: &CompactEnsemble) -> String {
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: DOC_VERSION,
        loss: model.loss(),
        intercept: model.intercept(),
        meta: model.meta.clone(),
        trees: model
            .trees()
            .iter()
            .zip(model.provenance())
            .map(|(t, p)| tree_to_doc(t, Some(*p)))
            .collect(),
    };
    to_canonical(&doc)
}

pub fn model_from_str(text: &str) -> Result<CompactEnsemble> {
    let value = parse_header(text, MODEL_FORMAT)?;
    let doc: ModelDoc = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let trees = doc.trees.iter().map(tree_from_doc).collect::<Result<Vec<_>>>()?;
    let provenance = doc
        .trees
        .iter()
        .zip(&trees)
        .enumerate()
        .map(|(r, (d, t))| {
            d.provenance.unwrap_or(Provenance {
                chain: 0,
                round: r,
                depth_cap: t.depth_cap(),
            })
        })
        .collect();
    CompactEnsemble::new(trees, provenance, doc.intercept, doc.loss, doc.meta)
}

pub fn pool_to_string(pool: &TreePool) -> String {
    let doc = PoolDoc {
        format: POOL_FORMAT.into(),
        version: DOC_VERSION,
        master_seed: pool.master_seed,
        strategy: pool.strategy.clone(),
        boost: pool.boost.clone(),
        config: pool.config.clone(),
        trees: pool
            .trees
            .iter()
            .zip(&pool.provenance)
            .map(|(t, p)| tree_to_doc(t, Some(*p)))
            .collect(),
    };
    to_canonical(&doc)
}

pub fn pool_from_str(text: &str) -> Result<TreePool> {
    let value = parse_header(text, POOL_FORMAT)?;
    let doc: PoolDoc = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let trees = doc.trees.iter().map(tree_from_doc).collect::<Result<Vec<_>>>()?;
    let provenance = doc
        .trees
        .iter()
        .map(|d| d.provenance.ok_or_else(|| Error::Schema("pool tree without provenance".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreePool {
        trees,
        provenance,
        master_seed: doc.master_seed,
        strategy: doc.strategy,
        boost: doc.boost,
        config: doc.config,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &CompactEnsemble, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &model_to_string(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CompactEnsemble> {
    model_from_str(&read(path.as_ref())?)
}

pub fn save_pool(pool: &TreePool, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &pool_to_string(pool))
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<TreePool> {
    pool_from_str(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{leaf, split};

    fn model() -> CompactEnsemble {
        let t1 = Tree::new(vec![split(0, 0.1 + 0.2, 1, 2), leaf(0), leaf(1)], vec![1.0 / 3.0, -2e-300], 2).unwrap();
        let t2 = Tree::constant(0.25, 3);
        CompactEnsemble::new(
            vec![t1, t2],
            vec![
                Provenance { chain: 1, round: 4, depth_cap: 2 },
                Provenance { chain: 2, round: 0, depth_cap: 3 },
            ],
            -0.7,
            LossKind::Logistic,
            EnsembleMeta {
                seed: Some(42),
                strategy: Some("mcmd".into()),
                source_ids: vec![17, 3],
                config: Some(serde_json::json!({"z": 1, "a": [1.5, 2]})),
            },
        )
        .unwrap()
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let m = model();
        let s = model_to_string(&m);
        let back = model_from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_string(&back), s);
    }

    #[test]
    fn missing_or_wrong_version() {
        let s = model_to_string(&model());
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(model_from_str(&v.to_string()), Err(Error::Schema(_))));
        v["version"] = 2.into();
        assert!(matches!(
            model_from_str(&v.to_string()),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn schema_violations() {
        let s = model_to_string(&model());
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["extra"] = 1.into();
        assert!(matches!(model_from_str(&v.to_string()), Err(Error::Schema(_))));
        assert!(model_from_str("[1,2]").is_err());
        assert!(matches!(pool_from_str(&s), Err(Error::Schema(_))));
        let bad = r#"{"format":"ret-model","version":1,"loss":"square","trees":[{"nodes":[{"kind":"split","feature":0,"threshold":1.0,"left":1,"right":1},{"kind":"leaf","leaf":0,"weight":1.0}]}]}"#;
        assert!(matches!(model_from_str(bad), Err(Error::MalformedTree(_))));
    }

    #[test]
    fn hand_written_constant_tree() {
        let text = r#"{"format":"ret-model","version":1,"loss":"square","trees":[{"nodes":[{"kind":"leaf","leaf":0,"weight":2.5}]}]}"#;
        let m = model_from_str(text).unwrap();
        assert_eq!(m.predict(&[9.0, -3.0]).unwrap(), 2.5);
        assert_eq!(m.intercept(), 0.0);
    }

    #[test]
    fn pool_round_trip() {
        let pool = TreePool {
            trees: model().trees().to_vec(),
            provenance: model().provenance().to_vec(),
            master_seed: 9,
            strategy: PoolStrategy::Mcsd { trees: 2, chains: 2, depth: 2 },
            boost: BoostConfig::default(),
            config: None,
        };
        let s = pool_to_string(&pool);
        let back = pool_from_str(&s).unwrap();
        assert_eq!(back, pool);
        assert_eq!(pool_to_string(&back), s);
    }
}
