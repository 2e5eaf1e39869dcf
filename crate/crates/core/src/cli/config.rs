//! TOML run configuration. Sections mirror the library modules; every key
//! has a default so an empty file is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boost::BoostConfig;
use crate::dataset::{LabelColumn, MissingPolicy, Task};
use crate::error::{Error, Result};
use crate::fsa::{BatchMode, FsaParams};
use crate::loss::LossKind;
use crate::pool::PoolStrategy;
use crate::tune::{GridSpec, LevelGrid, Pipeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub loss: LossSection,
    pub boost: BoostSection,
    pub pool: PoolStrategy,
    pub fsa: FsaSection,
    pub tune: TuneSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            loss: LossSection::default(),
            boost: BoostSection::default(),
            pool: PoolStrategy::Scsd { trees: 400, depth: 2 },
            fsa: FsaSection::default(),
            tune: TuneSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Label column, by header name or zero-based index.
    pub label: String,
    pub task: Task,
    pub missing: MissingPolicy,
    /// When `test` is absent, commands that need a test set split this
    /// fraction off the training file.
    pub test_fraction: f64,
    pub split_seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            label: "label".into(),
            task: Task::BinaryClassification,
            missing: MissingPolicy::DropRows,
            test_fraction: 0.2,
            split_seed: None,
        }
    }
}

impl DataSection {
    pub fn label_column(&self) -> LabelColumn {
        self.label.parse().expect("infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Defaults to logistic for classification and square for regression.
    pub kind: Option<LossKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSection {
    pub learning_rate: f64,
    pub lambda_leaf: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostSection {
    fn default() -> Self {
        let b = BoostConfig::default();
        Self {
            learning_rate: b.learning_rate,
            lambda_leaf: b.lambda_leaf,
            min_samples_leaf: b.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsaSection {
    pub k: usize,
    pub n_iter: usize,
    pub mu: f64,
    pub eta: f64,
    pub rho: f64,
    pub batch: BatchMode,
    pub refine_iter: Option<usize>,
    /// Multi-sparsity levels; when set, `select` emits one model per level.
    pub levels: Option<LevelGrid>,
}

impl Default for FsaSection {
    fn default() -> Self {
        let p = FsaParams::default();
        Self {
            k: p.k,
            n_iter: p.n_iter,
            mu: p.mu,
            eta: p.eta,
            rho: p.rho,
            batch: p.batch,
            refine_iter: p.refine_iter,
            levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub pipeline: Pipeline,
    pub folds: usize,
    pub levels: LevelGrid,
    /// Pool candidates; empty means just `[pool]`.
    pub pools: Vec<PoolStrategy>,
    /// Shrinkage grid; empty means just `fsa.rho`.
    pub rho: Vec<f64>,
    pub gb_depths: Vec<usize>,
    pub gb_learning_rates: Vec<f64>,
}

impl Default for TuneSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            pipeline: Pipeline::Ret,
            folds: 5,
            levels: g.levels,
            pools: Vec::new(),
            rho: Vec::new(),
            gb_depths: g.gb_depths,
            gb_learning_rates: g.gb_learning_rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: usize,
    /// Trees kept by the compact ensemble in the XOR experiment.
    pub xor_k: usize,
    /// Rows per XOR train and test set.
    pub xor_rows: usize,
    /// Boosting learning rates tried for the XOR baseline.
    pub gb_learning_rates: Vec<f64>,
    /// Maximum boosting rounds tried for the XOR baseline.
    pub gb_max_rounds: usize,
    /// Number of levels on the exponential grid of loss curves.
    pub curve_levels: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            runs: 100,
            xor_k: 1,
            xor_rows: 100,
            gb_learning_rates: vec![0.1, 0.3],
            gb_max_rounds: 200,
            curve_levels: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.kind.unwrap_or(match self.data.task {
            Task::BinaryClassification => LossKind::Logistic,
            Task::Regression => LossKind::Square,
        })
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            loss: self.loss_kind(),
            learning_rate: self.boost.learning_rate,
            lambda_leaf: self.boost.lambda_leaf,
            min_samples_leaf: self.boost.min_samples_leaf,
            ..BoostConfig::default()
        }
    }

    pub fn fsa_params(&self) -> FsaParams {
        FsaParams {
            k: self.fsa.k,
            n_iter: self.fsa.n_iter,
            mu: self.fsa.mu,
            eta: self.fsa.eta,
            rho: self.fsa.rho,
            batch: self.fsa.batch,
            seed: self.seed,
            refine_iter: self.fsa.refine_iter,
            record_trace: false,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            levels: self.tune.levels.clone(),
            pools: if self.tune.pools.is_empty() {
                vec![self.pool.clone()]
            } else {
                self.tune.pools.clone()
            },
            rho: if self.tune.rho.is_empty() {
                vec![self.fsa.rho]
            } else {
                self.tune.rho.clone()
            },
            fsa: self.fsa_params(),
            boost: self.boost_config(),
            gb_depths: self.tune.gb_depths.clone(),
            gb_learning_rates: self.tune.gb_learning_rates.clone(),
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let loss = self.loss_kind();
        if loss.is_classification() != (self.data.task == Task::BinaryClassification) {
            return Err(Error::Config(format!(
                "loss {loss} does not fit task {:?}",
                self.data.task
            )));
        }
        BoostConfig {
            depth_cap: 1,
            ..self.boost_config()
        }
        .validate()?;
        self.pool.validate()?;
        self.fsa_params().validate(self.pool.total_trees())?;
        if let Some(levels) = &self.fsa.levels {
            levels.levels()?;
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::param("test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// The configuration as embedded in artifacts.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.loss_kind(), LossKind::Logistic);
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let text = r#"
seed = 11
[data]
train = "a.csv"
label = "0"
task = "regression"
[pool]
kind = "mcmd"
trees = 60
chains = 6
depths = [2, 3, 4]
[fsa]
k = 4
eta = 0.01
levels = [8, 4, 2]
[tune]
levels = { k_max = 50, count = 4 }
"#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.data.label_column(), LabelColumn::Index(0));
        assert_eq!(c.loss_kind(), LossKind::Square);
        assert_eq!(c.pool.total_trees(), 60);
        assert_eq!(c.fsa.levels, Some(LevelGrid::List(vec![8, 4, 2])));
        assert_eq!(c.tune.levels, LevelGrid::Exponential { k_max: 50, count: 4 });
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let c = RunConfig::from_toml("[fsa]\nk = 500").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[loss]\nkind = \"square\"").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
