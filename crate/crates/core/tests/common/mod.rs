#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ret_core::dataset::{Dataset, Task};
use ret_core::loss::LossKind;
use ret_core::tree::Tree;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian-ish features (sum of uniforms) with a noisy nonlinear target.
pub fn regression(n: usize, p: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let t = row[0] * 2.0 + if p > 1 { (row[1] * 3.0).sin() } else { 0.0 } + 0.3 * (r.random::<f64>() - 0.5);
        x.extend(row);
        y.push(t);
    }
    Dataset::new(x, p, y, Task::Regression, None).unwrap()
}

/// Labels from a noisy linear rule, both classes guaranteed.
pub fn classification(n: usize, p: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    loop {
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| r.random::<f64>()).collect();
            let s = row[0] - 0.5 + if p > 1 { 0.5 * (row[1] - 0.5) } else { 0.0 } + 0.4 * (r.random::<f64>() - 0.5);
            x.extend(row);
            y.push(if s >= 0.0 { 1.0 } else { -1.0 });
        }
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return Dataset::new(x, p, y, Task::BinaryClassification, None).unwrap();
        }
    }
}

pub fn dataset_for(loss: LossKind, n: usize, p: usize, seed: u64) -> Dataset {
    match loss {
        LossKind::Square => regression(n, p, seed),
        _ => classification(n, p, seed),
    }
}

/// Writes `ds` as CSV with feature columns `f0..` and a `label` column last.
pub fn write_csv(ds: &Dataset, path: &Path) {
    let mut s = String::new();
    for j in 0..ds.n_features() {
        write!(s, "f{j},").unwrap();
    }
    s.push_str("label\n");
    for (i, row) in ds.rows().enumerate() {
        for v in row {
            write!(s, "{v},").unwrap();
        }
        writeln!(s, "{}", ds.labels()[i]).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

/// Penalized objective computed by walking every tree directly.
pub fn direct_objective(
    trees: &[Tree],
    weights: &[Vec<f64>],
    intercept: f64,
    ds: &Dataset,
    loss: LossKind,
    rho: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, row) in ds.rows().enumerate() {
        let mut u = intercept;
        for (t, w) in trees.iter().zip(weights) {
            u += w[t.leaf_index(row).unwrap()];
        }
        total += loss_value(loss, u, ds.labels()[i]);
    }
    total + rho * weights.iter().flatten().map(|w| w * w).sum::<f64>()
}

/// Reference loss values, written out independently of the library.
pub fn loss_value(loss: LossKind, u: f64, y: f64) -> f64 {
    match loss {
        LossKind::Square => (u - y).powi(2),
        LossKind::Logistic => (1.0 + (-u * y).exp()).ln(),
        LossKind::Hinge => (1.0 - u * y).max(0.0),
    }
}

pub fn loss_derivative(loss: LossKind, u: f64, y: f64) -> f64 {
    match loss {
        LossKind::Square => 2.0 * (u - y),
        LossKind::Logistic => -y / (1.0 + (u * y).exp()),
        LossKind::Hinge => {
            if u * y < 1.0 {
                -y
            } else {
                0.0
            }
        }
    }
}

/// Brute-force AUC: each (positive, negative) pair scores 1, ties 1/2.
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        if yi <= 0.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj > 0.0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Minimizes the penalized objective over leaf weights and intercept of
/// fixed trees by accelerated gradient descent with backtracking, starting
/// from the given point.
pub fn reference_refit(
    trees: &[Tree],
    ds: &Dataset,
    loss: LossKind,
    rho: f64,
    start: (Vec<Vec<f64>>, f64),
    iters: usize,
) -> f64 {
    let leaves: Vec<Vec<usize>> = ds
        .rows()
        .map(|row| trees.iter().map(|t| t.leaf_index(row).unwrap()).collect())
        .collect();
    let y = ds.labels();
    let eval = |w: &[Vec<f64>], b: f64| -> (f64, Vec<Vec<f64>>, f64) {
        let mut gw: Vec<Vec<f64>> = w.iter().map(|v| v.iter().map(|x| 2.0 * rho * x).collect()).collect();
        let mut gb = 0.0;
        let mut f = rho * w.iter().flatten().map(|x| x * x).sum::<f64>();
        for (i, li) in leaves.iter().enumerate() {
            let u = b + li.iter().enumerate().map(|(j, &l)| w[j][l]).sum::<f64>();
            f += loss_value(loss, u, y[i]);
            let d = loss_derivative(loss, u, y[i]);
            gb += d;
            for (j, &l) in li.iter().enumerate() {
                gw[j][l] += d;
            }
        }
        (f, gw, gb)
    };
    let axpy = |w: &[Vec<f64>], b: f64, gw: &[Vec<f64>], gb: f64, s: f64| -> (Vec<Vec<f64>>, f64) {
        (
            w.iter().zip(gw).map(|(v, g)| v.iter().zip(g).map(|(a, c)| a - s * c).collect()).collect(),
            b - s * gb,
        )
    };
    let (mut w, mut b) = start;
    let (mut zw, mut zb) = (w.clone(), b);
    let mut step = 1.0;
    let mut t = 1.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..iters {
        let (fz, gw, gb) = eval(&zw, zb);
        let gnorm2 = gw.iter().flatten().map(|g| g * g).sum::<f64>() + gb * gb;
        let (nw, nb) = loop {
            let (cw, cb) = axpy(&zw, zb, &gw, gb, step);
            if eval(&cw, cb).0 <= fz - 0.5 * step * gnorm2 || step < 1e-300 {
                break (cw, cb);
            }
            step *= 0.5;
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        zw = nw
            .iter()
            .zip(&w)
            .map(|(a, o)| a.iter().zip(o).map(|(x, y)| x + mom * (x - y)).collect())
            .collect();
        zb = nb + mom * (nb - b);
        let fnew = eval(&nw, nb).0;
        if fnew > best {
            // Restart the momentum when it overshoots.
            zw = nw.clone();
            zb = nb;
            t = 1.0;
        } else {
            t = t_next;
        }
        best = best.min(fnew);
        w = nw;
        b = nb;
        step *= 2.0;
    }
    best
}
