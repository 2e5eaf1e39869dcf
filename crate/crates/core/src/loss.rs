//! Losses `l(u, y)` with first and second derivatives in the score `u`, and
//! the penalized objective `sum_i l(f(x_i), y_i) + rho * ||B||^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsa::LeafWeightBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Square,
    Logistic,
    /// Subgradient-only; rejected by Newton boosting.
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, LossKind::Square)
    }

    /// Whether the loss has usable curvature for second-order boosting.
    pub fn supports_newton(self) -> bool {
        !matches!(self, LossKind::Hinge)
    }

    pub fn check_label(self, y: f64) -> Result<()> {
        if self.is_classification() && y != 1.0 && y != -1.0 {
            return Err(Error::InvalidLabel {
                label: y,
                loss: self.name(),
            });
        }
        Ok(())
    }

    pub fn check_labels(self, ys: &[f64]) -> Result<()> {
        ys.iter().try_for_each(|&y| self.check_label(y))
    }

    /// Value, derivative and second derivative at score `u`.
    pub fn eval(self, u: f64, y: f64) -> Result<LossEval> {
        self.check_label(y)?;
        Ok(self.eval_unchecked(u, y))
    }

    /// [`LossKind::eval`] without the label check; callers guarantee valid labels.
    #[inline]
    pub fn eval_unchecked(self, u: f64, y: f64) -> LossEval {
        match self {
            LossKind::Square => {
                let r = u - y;
                LossEval {
                    value: r * r,
                    grad: 2.0 * r,
                    hess: 2.0,
                }
            }
            LossKind::Logistic => {
                let m = u * y;
                let s_neg = sigmoid(-m);
                LossEval {
                    value: softplus(-m),
                    grad: -y * s_neg,
                    hess: s_neg * sigmoid(m),
                }
            }
            LossKind::Hinge => {
                let m = u * y;
                LossEval {
                    value: (1.0 - m).max(0.0),
                    grad: if m < 1.0 { -y } else { 0.0 },
                    hess: 0.0,
                }
            }
        }
    }

    #[inline]
    pub fn value(self, u: f64, y: f64) -> f64 {
        match self {
            LossKind::Square => (u - y) * (u - y),
            LossKind::Logistic => softplus(-u * y),
            LossKind::Hinge => (1.0 - u * y).max(0.0),
        }
    }

    #[inline]
    pub fn grad(self, u: f64, y: f64) -> f64 {
        match self {
            LossKind::Square => 2.0 * (u - y),
            LossKind::Logistic => -y * sigmoid(-u * y),
            LossKind::Hinge => {
                if u * y < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    /// Sum of losses over paired scores and labels.
    pub fn total(self, scores: &[f64], labels: &[f64]) -> f64 {
        scores
            .iter()
            .zip(labels)
            .map(|(&u, &y)| self.value(u, y))
            .sum()
    }

    /// Constant score minimizing `sum_i l(c, y_i)`. For logistic loss the
    /// positive fraction is clamped to `[1e-6, 1 - 1e-6]`; the flag reports
    /// whether the clamp was hit.
    pub fn constant_bias(self, labels: &[f64]) -> (f64, bool) {
        let n = labels.len().max(1) as f64;
        match self {
            LossKind::Square => (labels.iter().sum::<f64>() / n, false),
            LossKind::Logistic => {
                let q = labels.iter().filter(|&&y| y > 0.0).count() as f64 / n;
                let clamped = q.clamp(1e-6, 1.0 - 1e-6);
                ((clamped / (1.0 - clamped)).ln(), clamped != q)
            }
            LossKind::Hinge => {
                let best = [-1.0, 0.0, 1.0]
                    .into_iter()
                    .map(|c| (c, labels.iter().map(|&y| self.value(c, y)).sum::<f64>()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c)
                    .unwrap_or(0.0);
                (best, false)
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(LossKind::Square),
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected square | logistic | hinge)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub rho: f64,
}

impl PenaltyConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("{rho} must be finite and >= 0")));
        }
        Ok(Self { rho })
    }
}

/// `sum_i l(pred_i, y_i) + rho * (sum of squared leaf weights)`.
pub fn penalized_objective(
    kind: LossKind,
    predictions: &[f64],
    labels: &[f64],
    bank: &LeafWeightBank,
    penalty: PenaltyConfig,
) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    kind.check_labels(labels)?;
    Ok(kind.total(predictions, labels) + penalty.rho * bank.squared_norm())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn derivatives_match_finite_differences(u in -10.0f64..10.0, pos in any::<bool>(), reg_y in -5.0f64..5.0) {
            let h = 1e-5;
            for (kind, y) in [(LossKind::Square, reg_y), (LossKind::Logistic, if pos { 1.0 } else { -1.0 })] {
                let e = kind.eval(u, y).unwrap();
                let fd_g = (kind.value(u + h, y) - kind.value(u - h, y)) / (2.0 * h);
                let fd_h = (kind.grad(u + h, y) - kind.grad(u - h, y)) / (2.0 * h);
                // Logistic curvature vanishes in the tails; compare absolutely there.
                prop_assert!(rel_err(fd_g, e.grad) < 1e-5 || (fd_g - e.grad).abs() < 1e-9);
                prop_assert!(rel_err(fd_h, e.hess) < 1e-5 || (fd_h - e.hess).abs() < 1e-9);
            }
        }

        #[test]
        fn logistic_gradient_is_bounded(u in -30.0f64..30.0, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            let g = LossKind::Logistic.grad(u, y);
            prop_assert!((-g - y * sigmoid(-u * y)).abs() < 1e-15);
            prop_assert!(g.abs() > 0.0 && g.abs() < 1.0);
        }
    }
}
