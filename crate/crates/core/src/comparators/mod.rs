//! Baseline weights: inverse propensity, importance, overlap and entropy balancing.

pub mod entropy;
pub mod logistic;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::weights::WeightSolution;

pub use entropy::{EbalTarget, MomentBasis, entropy_balancing};
pub use logistic::fit_logistic;

/// Ridge used for the propensity and participation fits.
pub const PROBABILITY_RIDGE: f64 = 1e-6;
/// Probabilities are clipped to `[CLIP, 1 - CLIP]` before entering a weight formula.
pub const CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityKind {
    /// `π(x) = P(A = 1 | X = x, S = 1)`
    Propensity,
    /// `ρ(x) = P(S = 1 | X = x)`
    Participation,
}

/// Logistic model with main effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityModel {
    pub kind: ProbabilityKind,
    /// Intercept followed by one slope per covariate.
    pub coefficients: Vec<f64>,
}

impl ProbabilityModel {
    /// Propensity fitted on source rows.
    pub fn fit_propensity(data: &Dataset) -> Result<Self> {
        let rows = data.source_rows();
        let y: Vec<bool> = rows.iter().map(|&r| data.treatment(r) == Some(true)).collect();
        let coefficients = fit_logistic(&data.select_rows(&rows), &y, None, PROBABILITY_RIDGE)?;
        Ok(Self {
            kind: ProbabilityKind::Propensity,
            coefficients,
        })
    }

    /// Participation fitted on the pooled sample with `S` as the label.
    pub fn fit_participation(data: &Dataset) -> Result<Self> {
        let coefficients = fit_logistic(data.x(), data.s(), None, PROBABILITY_RIDGE)?;
        Ok(Self {
            kind: ProbabilityKind::Participation,
            coefficients,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic::predict(&self.coefficients, x)
    }

    /// Predictions for every dataset row.
    pub fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        let x = data.x();
        (0..data.n())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict(&row)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalKind {
    Ipw,
    Importance,
    Overlap,
}

#[derive(Debug, Clone)]
pub struct ClassicalWeights {
    pub solution: WeightSolution,
    /// Number of probabilities moved onto the clipping bounds.
    pub clipped: usize,
}

/// Weights from per-row probabilities (indexed by dataset row; `rho_hat` is
/// only read for `Importance`). Each treatment group is then normalised to sum `n_s`.
pub fn classical_weights(
    data: &Dataset,
    kind: ClassicalKind,
    pi_hat: &[f64],
    rho_hat: Option<&[f64]>,
) -> Result<ClassicalWeights> {
    let n = data.n();
    if pi_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: pi_hat.len(),
        });
    }
    let rho_hat = match (kind, rho_hat) {
        (ClassicalKind::Importance, None) => {
            return Err(Error::InvalidArgument("importance weights need participation probabilities".into()));
        }
        (ClassicalKind::Importance, Some(r)) if r.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        (_, r) => r,
    };
    let mut clipped = 0;
    let mut clip = |row: usize, v: f64| -> Result<f64> {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::ProbabilityBoundary { row, value: v });
        }
        let c = v.clamp(CLIP, 1.0 - CLIP);
        if c != v {
            clipped += 1;
        }
        Ok(c)
    };
    let rows = data.source_rows();
    let mut raw = Vec::with_capacity(rows.len());
    for &row in &rows {
        let treated = data.treatment(row) == Some(true);
        let pi = clip(row, pi_hat[row])?;
        let ipw = if treated { 1.0 / pi } else { 1.0 / (1.0 - pi) };
        raw.push(match kind {
            ClassicalKind::Ipw => ipw,
            ClassicalKind::Importance => {
                let rho = clip(row, rho_hat.expect("checked above")[row])?;
                ipw * (1.0 - rho) / rho
            }
            ClassicalKind::Overlap => {
                if treated {
                    1.0 - pi
                } else {
                    pi
                }
            }
        });
    }
    Ok(ClassicalWeights {
        solution: WeightSolution::normalized(data, &raw)?,
        clipped,
    })
}

/// Classical weights with probabilities estimated by logistic regression.
pub fn estimated_weights(data: &Dataset, kind: ClassicalKind) -> Result<ClassicalWeights> {
    let pi = ProbabilityModel::fit_propensity(data)?.predict_rows(data);
    let rho = match kind {
        ClassicalKind::Importance => Some(ProbabilityModel::fit_participation(data)?.predict_rows(data)),
        _ => None,
    };
    // fitted probabilities can round to exactly 0 or 1; clip them here
    let pull = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|p| p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).collect() };
    classical_weights(data, kind, &pull(pi), rho.map(pull).as_deref())
}
