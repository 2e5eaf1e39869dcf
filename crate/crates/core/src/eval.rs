//! Metrics and experiment tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::tree::CompactEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

impl MetricReport {
    fn new(metric: &str, value: f64, n: usize) -> Self {
        Self {
            metric: metric.to_string(),
            value,
            n,
        }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} scores for {} labels", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    Ok(())
}

/// Area under the ROC curve in Mann-Whitney form: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels)?;
    if let Some(&y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidLabel {
            label: y,
            loss: "auc",
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|&&r| labels[r] == 1.0).count();
        rank_sum += midrank * pos as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Fraction of rows whose sign disagrees with the label; a score of 0
/// predicts +1.
pub fn classification_error(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels)?;
    let wrong = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (if s >= 0.0 { 1.0 } else { -1.0 }) != y)
        .count();
    Ok(wrong as f64 / scores.len() as f64)
}

pub fn r_squared(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Data("targets have zero variance".into()));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean per-example loss of `model` on `ds`.
pub fn mean_loss(model: &CompactEnsemble, ds: &Dataset) -> Result<f64> {
    let scores = model.predict_dataset(ds)?;
    model.loss().check_labels(ds.labels())?;
    Ok(model.loss().total(&scores, ds.labels()) / ds.n_rows() as f64)
}

/// Standard metrics for the dataset's task.
pub fn evaluate(model: &CompactEnsemble, ds: &Dataset) -> Result<Vec<MetricReport>> {
    let scores = model.predict_dataset(ds)?;
    let n = ds.n_rows();
    let mut out = vec![MetricReport::new("mean_loss", mean_loss(model, ds)?, n)];
    match ds.task() {
        Task::BinaryClassification => {
            out.push(MetricReport::new("auc", auc(&scores, ds.labels())?, n));
            out.push(MetricReport::new("error", classification_error(&scores, ds.labels())?, n));
        }
        Task::Regression => {
            out.push(MetricReport::new("r2", r_squared(&scores, ds.labels())?, n));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Mean train and test loss of each `(k, model)` pair, in the given order.
pub fn loss_curve(models: &[(usize, &CompactEnsemble)], train: &Dataset, test: &Dataset) -> Result<Vec<CurveRow>> {
    if let Some((_, first)) = models.first() {
        if models.iter().any(|(_, m)| m.loss() != first.loss()) {
            return Err(Error::Config("models in a loss curve must share a loss".into()));
        }
    }
    models
        .iter()
        .map(|&(k, m)| {
            Ok(CurveRow {
                k,
                train_loss: mean_loss(m, train)?,
                test_loss: mean_loss(m, test)?,
            })
        })
        .collect()
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("k,train_loss,test_loss\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.k, r.train_loss, r.test_loss).unwrap();
    }
    s
}

/// Fraction of the ensemble's trees per depth cap. Every depth in `depths`
/// appears (possibly with 0); depths outside it are still counted so the
/// fractions always sum to 1.
pub fn depth_histogram(model: &CompactEnsemble, depths: &[usize]) -> BTreeMap<usize, f64> {
    let mut hist: BTreeMap<usize, f64> = depths.iter().map(|&d| (d, 0.0)).collect();
    let k = model.k() as f64;
    for p in model.provenance() {
        *hist.entry(p.depth_cap).or_insert(0.0) += 1.0 / k;
    }
    hist
}

pub fn histogram_csv(hist: &BTreeMap<usize, f64>) -> String {
    let mut s = String::from("depth,fraction\n");
    for (d, f) in hist {
        writeln!(s, "{d},{f}").unwrap();
    }
    s
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        proptest::collection::vec((-100i32..100, any::<bool>()), 2..60).prop_filter_map("both classes", |v| {
            let s: Vec<f64> = v.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let y: Vec<f64> = v.iter().map(|(_, b)| if *b { 1.0 } else { -1.0 }).collect();
            (y.contains(&1.0) && y.contains(&-1.0)).then_some((s, y))
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting((s, y) in instance()) {
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if y[i] == 1.0 && y[j] == -1.0 {
                        pairs += 1.0;
                        wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((auc(&s, &y).unwrap() - wins / pairs).abs() < 1e-12);
        }

        #[test]
        fn auc_monotone_invariance((s, y) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert!((auc(&s, &y).unwrap() - auc(&t, &y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_negation_complements(v in proptest::collection::vec(any::<bool>(), 2..40)) {
            prop_assume!(v.contains(&true) && v.contains(&false));
            let s: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let y: Vec<f64> = v.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            prop_assert!((auc(&s, &y).unwrap() + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn error_scale_invariant((s, y) in instance(), c in 0.01f64..100.0) {
            let t: Vec<f64> = s.iter().map(|v| v * c).collect();
            prop_assert_eq!(classification_error(&s, &y).unwrap(), classification_error(&t, &y).unwrap());
        }
    }
}
