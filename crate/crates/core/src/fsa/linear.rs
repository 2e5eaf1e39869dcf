//! Annealed selection of coordinates of a linear model `u = X beta`.

use rayon::prelude::*;

use super::{rank_top, schedule, BatchMode, DivergenceGuard, FsaParams};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::rng;

const ROW_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFsa {
    /// Dense coefficients; zero outside `support`.
    pub coef: Vec<f64>,
    /// Surviving coordinates, ascending.
    pub support: Vec<usize>,
    pub objective: f64,
    pub eta: f64,
}

fn check_design(x: &[f64], p: usize, y: &[f64]) -> Result<usize> {
    if p == 0 {
        return Err(Error::param("p", "design has no columns"));
    }
    if !x.len().is_multiple_of(p) || x.len() / p != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design of {} values does not match {} rows x {p} columns",
            x.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Data("design has no rows".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("design contains non-finite values".into()));
    }
    Ok(y.len())
}

fn margins(x: &[f64], p: usize, coef: &[f64], support: &[usize]) -> Vec<f64> {
    x.par_chunks(p)
        .map(|row| support.iter().map(|&j| row[j] * coef[j]).sum())
        .collect()
}

fn objective(loss: LossKind, u: &[f64], y: &[f64], coef: &[f64], rho: f64) -> f64 {
    let partial: Vec<f64> = u
        .par_chunks(ROW_CHUNK)
        .zip(y.par_chunks(ROW_CHUNK))
        .map(|(u, y)| loss.total(u, y))
        .collect();
    partial.iter().sum::<f64>() + rho * coef.iter().map(|b| b * b).sum::<f64>()
}

/// `X^T g` over `rows` (every row when `None`); chunk sums are reduced in
/// chunk order so the result does not depend on the thread count.
fn data_gradient(x: &[f64], p: usize, g: &[f64], rows: Option<&[usize]>) -> Vec<f64> {
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..g.len()).collect();
            &all
        }
    };
    let partial: Vec<Vec<f64>> = rows
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; p];
            for &i in chunk {
                let gi = g[i];
                for (a, &v) in acc.iter_mut().zip(&x[i * p..(i + 1) * p]) {
                    *a += gi * v;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; p];
    for acc in partial {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    total
}

/// Penalized objective `sum_i loss(x_i . beta, y_i) + rho ||beta||^2` and
/// its gradient (a subgradient for hinge loss).
pub fn linear_objective_and_gradient(
    x: &[f64],
    p: usize,
    y: &[f64],
    loss: LossKind,
    coef: &[f64],
    rho: f64,
) -> Result<(f64, Vec<f64>)> {
    check_design(x, p, y)?;
    if coef.len() != p {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {p} columns", coef.len())));
    }
    loss.check_labels(y)?;
    let all: Vec<usize> = (0..p).collect();
    let u = margins(x, p, coef, &all);
    let g: Vec<f64> = u.iter().zip(y).map(|(&u, &y)| loss.grad(u, y)).collect();
    let mut grad = data_gradient(x, p, &g, None);
    for (d, &b) in grad.iter_mut().zip(coef) {
        *d += 2.0 * rho * b;
    }
    Ok((objective(loss, &u, y, coef, rho), grad))
}

/// Annealed sparse fit of `beta` on the row-major `n x p` design `x`.
/// Coordinates start at zero; after each gradient step only the scheduled
/// number with largest `|beta_j|` survive (ties: smaller index).
pub fn fsa_linear(x: &[f64], p: usize, y: &[f64], loss: LossKind, params: &FsaParams) -> Result<LinearFsa> {
    let n = check_design(x, p, y)?;
    params.validate(p)?;
    loss.check_labels(y)?;
    let mut coef = vec![0.0; p];
    let mut support: Vec<usize> = (0..p).collect();
    let mut u = vec![0.0; n];
    let mut guard = DivergenceGuard::new(params.eta);
    let mut before = objective(loss, &u, y, &coef, params.rho);

    let batch_size = match params.batch {
        BatchMode::Minibatch { size } if size < n => Some(size),
        _ => None,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n;
    let mut shuffler = rng::rng_for(params.seed, rng::stream::MINIBATCH);

    for e in 1..=params.n_iter {
        let g: Vec<f64> = u.par_iter().zip(y.par_iter()).map(|(&u, &y)| loss.grad(u, y)).collect();
        let grad = match batch_size {
            None => data_gradient(x, p, &g, None),
            Some(size) => {
                use rand::seq::SliceRandom;
                if pos + size > n {
                    order.shuffle(&mut shuffler);
                    pos = 0;
                }
                let mut rows = order[pos..pos + size].to_vec();
                rows.sort_unstable();
                pos += size;
                let scale = n as f64 / size as f64;
                data_gradient(x, p, &g, Some(&rows)).into_iter().map(|v| v * scale).collect()
            }
        };
        for &j in &support {
            coef[j] -= guard.eta * (grad[j] + 2.0 * params.rho * coef[j]);
        }
        if support.iter().any(|&j| !coef[j].is_finite()) {
            return Err(Error::Divergence {
                eta: guard.eta,
                detail: "non-finite coefficient".into(),
            });
        }
        u = margins(x, p, &coef, &support);
        guard.observe(before, objective(loss, &u, y, &coef, params.rho))?;

        let keep = schedule(e, params.k, p, params.n_iter, params.mu)?.min(support.len());
        let scored = support.iter().map(|&j| (j, coef[j].abs())).collect();
        let mut kept = rank_top(scored, keep);
        kept.sort_unstable();
        for &j in &support {
            if kept.binary_search(&j).is_err() {
                coef[j] = 0.0;
            }
        }
        support = kept;
        u = margins(x, p, &coef, &support);
        before = objective(loss, &u, y, &coef, params.rho);
    }
    Ok(LinearFsa {
        coef,
        support,
        objective: before,
        eta: guard.eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize, p: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut r = rng::rng_for(seed, 99);
        (0..n * p).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_step_keeps_first_k() {
        let x = design(10, 6, 1);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let params = FsaParams { k: 2, n_iter: 5, eta: 0.0, ..FsaParams::default() };
        let out = fsa_linear(&x, 6, &y, LossKind::Square, &params).unwrap();
        assert_eq!(out.support, vec![0, 1]);
        assert!(out.coef.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn full_support_matches_gradient_descent() {
        let (n, p) = (30, 3);
        let x = design(n, p, 2);
        let y: Vec<f64> = x.chunks(p).map(|r| r[0] - 2.0 * r[2]).collect();
        let params = FsaParams { k: p, n_iter: 50, eta: 0.01, rho: 0.1, ..FsaParams::default() };
        let out = fsa_linear(&x, p, &y, LossKind::Square, &params).unwrap();
        let mut b = vec![0.0; p];
        for _ in 0..50 {
            let (_, g) = linear_objective_and_gradient(&x, p, &y, LossKind::Square, &b, 0.1).unwrap();
            for (bj, gj) in b.iter_mut().zip(g) {
                *bj -= 0.01 * gj;
            }
        }
        for (a, b) in out.coef.iter().zip(&b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_malformed_design() {
        let params = FsaParams { k: 1, ..FsaParams::default() };
        assert!(fsa_linear(&[1.0, 2.0, 3.0], 2, &[1.0], LossKind::Square, &params).is_err());
        assert!(fsa_linear(&[f64::NAN, 2.0], 2, &[1.0], LossKind::Square, &params).is_err());
        assert!(fsa_linear(&[1.0, 2.0], 2, &[0.5], LossKind::Logistic, &params).is_err());
    }

    #[test]
    fn hinge_runs_with_subgradients() {
        let (n, p) = (40, 4);
        let x = design(n, p, 5);
        let y: Vec<f64> = x.chunks(p).map(|r| if r[1] > 0.0 { 1.0 } else { -1.0 }).collect();
        let params = FsaParams { k: 1, n_iter: 100, eta: 0.01, ..FsaParams::default() };
        let out = fsa_linear(&x, p, &y, LossKind::Hinge, &params).unwrap();
        assert_eq!(out.support, vec![1]);
    }
}
