//! Weighted value estimation and linear treatment rules learned through the
//! weighted-classification reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::comparators::logistic;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::weights::WeightSolution;

/// Default ridge on the slopes of the rule-learning logistic fit.
pub const RULE_RIDGE: f64 = 1e-4;

/// `d(x) = 1{β₀ + xᵀβ ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl LinearRule {
    pub fn new(beta0: f64, beta: Vec<f64>) -> Self {
        Self { beta0, beta }
    }

    /// The rule that treats everyone.
    pub fn treat_all(p: usize) -> Self {
        Self::new(1.0, vec![0.0; p])
    }

    pub fn treat_none(p: usize) -> Self {
        Self::new(-1.0, vec![0.0; p])
    }

    /// `1{cos θ x₁ + sin θ x₂ + b ≥ 0}` embedded in `p` covariates.
    pub fn from_angle(theta: f64, offset: f64, p: usize) -> Self {
        let mut beta = vec![0.0; p];
        beta[0] = theta.cos();
        if p > 1 {
            beta[1] = theta.sin();
        }
        Self::new(offset, beta)
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        self.beta0 + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    #[inline]
    pub fn decide(&self, x: &[f64]) -> bool {
        self.score(x) >= 0.0
    }

    /// Decisions for every row of `x`.
    pub fn decide_all(&self, x: &DMatrix<f64>) -> Vec<bool> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.decide(&row)
            })
            .collect()
    }
}

fn row_of(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// `(1/n_s) [Σ_{S₁} w d(X) Y + Σ_{S₀} w (1 - d(X)) Y]`.
pub fn estimate_value(rule: &LinearRule, w: &WeightSolution, data: &Dataset) -> f64 {
    let ns = w.rows.len() as f64;
    let total: f64 = w
        .rows
        .iter()
        .zip(&w.w)
        .map(|(&row, &wi)| {
            let d = rule.decide(&row_of(data.x(), row));
            let y = data.outcome(row).unwrap_or(0.0);
            match (data.treatment(row), d) {
                (Some(true), true) | (Some(false), false) => wi * y,
                _ => 0.0,
            }
        })
        .sum();
    total / ns
}

/// Weighted classification problem equivalent to maximising the weighted value.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationView {
    /// Dataset rows kept (those with `w Y ≠ 0`).
    pub rows: Vec<usize>,
    /// `Ã · sign(w Y)` with treatment recoded to `Ã ∈ {-1, +1}`.
    pub labels: Vec<f64>,
    /// `|w Y|`.
    pub case_weights: Vec<f64>,
}

pub fn classification_view(w: &WeightSolution, data: &Dataset) -> Result<ClassificationView> {
    let mut view = ClassificationView {
        rows: Vec::new(),
        labels: Vec::new(),
        case_weights: Vec::new(),
    };
    for (&row, &wi) in w.rows.iter().zip(&w.w) {
        let (a, y) = match (data.treatment(row), data.outcome(row)) {
            (Some(a), Some(y)) => (a, y),
            _ => return Err(Error::InvalidArgument(format!("row {row} is not a source row"))),
        };
        let wy = wi * y;
        if wy == 0.0 {
            continue;
        }
        let signed_a = if a { 1.0 } else { -1.0 };
        view.rows.push(row);
        view.labels.push(signed_a * wy.signum());
        view.case_weights.push(wy.abs());
    }
    if view.rows.is_empty() {
        return Err(Error::NoCaseWeight);
    }
    Ok(view)
}

/// Fits `d` by weighted ridge-logistic regression on the classification view.
/// Case weights are rescaled to mean one first, so the rule does not depend
/// on their overall scale.
pub fn learn_linear_rule(w: &WeightSolution, data: &Dataset, ridge: f64) -> Result<LinearRule> {
    let view = classification_view(w, data)?;
    let positive = view.labels.iter().filter(|&&l| l > 0.0).count();
    let p = data.p();
    if positive == view.labels.len() {
        return Ok(LinearRule::treat_all(p));
    }
    if positive == 0 {
        return Ok(LinearRule::treat_none(p));
    }
    let x = data.select_rows(&view.rows);
    let y: Vec<bool> = view.labels.iter().map(|&l| l > 0.0).collect();
    let mean = view.case_weights.iter().sum::<f64>() / view.case_weights.len() as f64;
    let cw: Vec<f64> = view.case_weights.iter().map(|c| c / mean).collect();
    let coef = logistic::fit_logistic(&x, &y, Some(&cw), ridge)?;
    Ok(LinearRule::new(coef[0], coef[1..].to_vec()))
}
