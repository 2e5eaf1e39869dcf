//! Tabular datasets: CSV ingestion, train/test splitting and K-fold assignment.
//!
//! Features are stored row-major in one contiguous buffer. Datasets are
//! immutable once built; every constructor checks the invariants (at least
//! one row and one column, finite features, classification labels in
//! {-1, +1}).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "binary-classification" | "classification" => Ok(Task::BinaryClassification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    task: Task,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<f64>,
        task: Task,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Data("dataset needs at least one feature".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("dataset needs at least one row".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} rows x {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at row {}, column {}",
                pos / n_features,
                pos % n_features
            )));
        }
        match task {
            Task::BinaryClassification => {
                if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
                    return Err(Error::Data(format!(
                        "classification label {bad} is not -1 or +1"
                    )));
                }
            }
            Task::Regression => {
                if labels.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Data("non-finite regression target".into()));
                }
            }
        }
        let feature_names = match feature_names {
            Some(names) if names.len() == n_features => names,
            Some(names) => {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature names for {} features",
                    names.len(),
                    n_features
                )))
            }
            None => (0..n_features).map(|j| format!("x{j}")).collect(),
        };
        Ok(Self {
            n_rows: labels.len(),
            features,
            labels,
            n_features,
            task,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.n_features)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.n_features + j]
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n_rows {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} out of range for {} rows",
                    self.n_rows
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            features,
            self.n_features,
            labels,
            self.task,
            Some(self.feature_names.clone()),
        )
    }

    /// Per-column standardization (mean 0, variance 1); constant columns
    /// become all zeros. Only the linear model path uses this: trees are
    /// invariant to monotone rescaling.
    pub fn standardized(&self) -> Dataset {
        let n = self.n_rows as f64;
        let mut out = self.features.clone();
        for j in 0..self.n_features {
            let mean = self.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = self.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for i in 0..self.n_rows {
                let v = &mut out[i * self.n_features + j];
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
        Dataset {
            features: out,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    DropRows,
    FailFast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// For classification, the raw label value mapped to -1 and to +1.
    pub label_map: Option<(String, String)>,
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a comma-separated file with a header row. Rows with an empty or
/// non-numeric cell are dropped under [`MissingPolicy::DropRows`].
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    task: Task,
    policy: MissingPolicy,
) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, label_column, task, policy)
}

pub fn load_csv_reader<R: std::io::Read>(
    reader: R,
    label_column: &LabelColumn,
    task: Task,
    policy: MissingPolicy,
) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < header.len() => *i,
        LabelColumn::Index(i) => {
            return Err(Error::Data(format!(
                "label column index {i} out of range ({} columns)",
                header.len()
            )))
        }
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("label column `{name}` not found")))?,
    };
    if header.len() < 2 {
        return Err(Error::Data("need at least one feature column".into()));
    }
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n_features = feature_names.len();

    let mut features = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    let mut row_buf = Vec::with_capacity(n_features);
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        rows_read += 1;
        row_buf.clear();
        let mut ok = record.len() == header.len();
        let mut label: Option<String> = None;
        if ok {
            for (j, cell) in record.iter().enumerate() {
                if j == label_idx {
                    let t = cell.trim();
                    let valid = match task {
                        Task::Regression => parse_cell(t).is_some(),
                        Task::BinaryClassification => !t.is_empty(),
                    };
                    if !valid {
                        ok = false;
                        break;
                    }
                    label = Some(t.to_string());
                } else {
                    match parse_cell(cell) {
                        Some(v) => row_buf.push(v),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
            }
        }
        if !ok {
            if policy == MissingPolicy::FailFast {
                return Err(Error::Data(format!(
                    "missing or non-numeric cell in data row {}",
                    line + 1
                )));
            }
            rows_dropped += 1;
            continue;
        }
        features.extend_from_slice(&row_buf);
        raw_labels.push(label.expect("label cell present"));
    }
    if raw_labels.is_empty() {
        return Err(Error::Data("no rows remaining after dropping missing data".into()));
    }

    let (labels, label_map) = match task {
        Task::Regression => (
            raw_labels.iter().map(|s| parse_cell(s).expect("validated")).collect(),
            None,
        ),
        Task::BinaryClassification => {
            let (neg, pos) = classification_label_map(&raw_labels)?;
            let labels = raw_labels
                .iter()
                .map(|s| if *s == neg { -1.0 } else { 1.0 })
                .collect();
            (labels, Some((neg, pos)))
        }
    };
    let ds = Dataset::new(features, n_features, labels, task, Some(feature_names))?;
    Ok((
        ds,
        LoadReport {
            rows_read,
            rows_dropped,
            label_map,
        },
    ))
}

/// Feature-only loading for scoring: every column except `skip` (if it is
/// present) is a feature, and any missing cell is an error so that output
/// rows stay aligned with input rows. Returns row-major values and names.
pub fn load_features_csv(path: impl AsRef<Path>, skip: Option<&str>) -> Result<(Vec<f64>, Vec<String>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let skip_idx = skip.and_then(|name| header.iter().position(|h| h == name));
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if names.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == skip_idx {
                continue;
            }
            values.push(parse_cell(cell).ok_or_else(|| {
                Error::Data(format!("missing or non-numeric cell in data row {}", line + 1))
            })?);
        }
    }
    Ok((values, names))
}

/// Chooses which raw label becomes -1. Columns already coded as -1/+1 keep
/// their meaning; otherwise the lexicographically smaller value maps to -1.
fn classification_label_map(raw: &[String]) -> Result<(String, String)> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    match distinct.len() {
        0 | 1 => Err(Error::DegenerateLabels(format!(
            "label column has a single value {:?}",
            distinct.iter().next().copied().unwrap_or("")
        ))),
        2 => {
            let mut it = distinct.into_iter();
            let (a, b) = (it.next().unwrap(), it.next().unwrap());
            let numeric = (a.parse::<f64>(), b.parse::<f64>());
            if let (Ok(x), Ok(y)) = numeric {
                if x == 1.0 && y == -1.0 {
                    return Ok((b.to_string(), a.to_string()));
                }
            }
            Ok((a.to_string(), b.to_string()))
        }
        n => Err(Error::Data(format!(
            "classification needs exactly two label values, found {n}"
        ))),
    }
}

/// Random disjoint split into (train, test) with `round(N * test_fraction)`
/// test rows.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n_rows(), test_fraction, seed)?;
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param("test_fraction", format!("{test_fraction} is not in (0, 1)")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::param(
            "test_fraction",
            format!("{test_fraction} of {n} rows leaves an empty part"),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::rng_for(seed, rng::stream::SPLIT));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// (training rows, validation rows) for one fold, each ascending.
    pub fn fold_rows(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f == fold {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        (train, valid)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assigns rows to `k` folds of near-equal size (sizes differ by at most 1,
/// larger folds first).
pub fn make_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    make_folds_n(ds.n_rows(), k, seed)
}

pub fn make_folds_n(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::param("folds", format!("K={k} must satisfy 2 <= K <= N={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::rng_for(seed, rng::stream::FOLDS));
    let mut fold_of = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
