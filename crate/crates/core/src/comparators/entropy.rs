//! Entropy balancing: per treatment group, the maximum-entropy weights whose
//! weighted moments equal a target vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::weights::WeightSolution;

/// Tolerance on the reweighted moment constraints.
pub const MOMENT_TOLERANCE: f64 = 1e-8;
const MAX_ITER: usize = 200;
const NEWTON_DECREMENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentBasis {
    /// Covariate means.
    First,
    /// Means and means of squares.
    FirstAndSquares,
}

/// Which population the moments are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbalTarget {
    /// Pooled source sample.
    SourceMoments,
    /// Target sample.
    TargetMoments,
}

impl MomentBasis {
    pub fn features(&self, x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        let p = x.ncols();
        let k = match self {
            Self::First => p,
            Self::FirstAndSquares => 2 * p,
        };
        DMatrix::from_fn(rows.len(), k, |i, j| {
            let v = x[(rows[i], j % p)];
            if j < p { v } else { v * v }
        })
    }
}

/// Solution for one group.
#[derive(Debug, Clone)]
pub struct EbalGroup {
    /// Weights summing to one.
    pub weights: Vec<f64>,
    /// Dual objective after each accepted Newton step.
    pub dual_history: Vec<f64>,
    pub max_violation: f64,
}

/// Minimises `Σ wᵢ log wᵢ` over the simplex subject to `Σ wᵢ cᵢ = target`.
///
/// Solved through the dual `min_λ log Σ exp(λᵀ(cᵢ - target))` by damped
/// Newton; the primal weights are the normalised exponentials.
pub fn entropy_balance_group(features: &DMatrix<f64>, target: &[f64]) -> Result<EbalGroup> {
    let (m, k) = features.shape();
    if target.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: target.len(),
        });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    // centre at the target and scale each moment to unit spread; this leaves
    // the primal solution unchanged and improves conditioning
    let mut keep = Vec::new();
    let mut centred = DMatrix::zeros(m, k);
    let mut scale = vec![1.0; k];
    for j in 0..k {
        let col = features.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            let violation = (mean - target[j]).abs();
            if violation > MOMENT_TOLERANCE {
                return Err(Error::MomentInfeasible {
                    max_violation: violation,
                });
            }
            continue;
        }
        scale[j] = sd;
        keep.push(j);
        for i in 0..m {
            centred[(i, j)] = (features[(i, j)] - target[j]) / sd;
        }
    }
    let c = centred.select_columns(keep.iter());
    let kk = keep.len();

    let weights_at = |lam: &DVector<f64>| -> (Vec<f64>, f64) {
        let eta = &c * lam;
        let top = eta.max();
        let e: Vec<f64> = eta.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = e.iter().sum();
        (e.iter().map(|v| v / z).collect(), top + z.ln())
    };
    let violation_of = |w: &[f64]| -> f64 {
        (0..kk)
            .map(|j| {
                let moment: f64 = (0..m).map(|i| w[i] * c[(i, j)]).sum();
                (moment * scale[keep[j]]).abs()
            })
            .fold(0.0, f64::max)
    };

    let mut lam = DVector::zeros(kk);
    let (mut w, mut dual) = weights_at(&lam);
    let mut history = vec![dual];
    let mut violation = violation_of(&w);
    for _ in 0..MAX_ITER {
        if violation <= MOMENT_TOLERANCE {
            break;
        }
        let wv = DVector::from_column_slice(&w);
        let grad = c.tr_mul(&wv);
        let mut cov = DMatrix::zeros(kk, kk);
        for i in 0..m {
            let ci = c.row(i);
            cov += ci.transpose() * ci * w[i];
        }
        cov -= &grad * grad.transpose();
        let step = match cov.cholesky() {
            Some(chol) => chol.solve(&(-&grad)),
            None => return Err(Error::MomentInfeasible { max_violation: violation }),
        };
        let slope = grad.dot(&step);
        if -slope <= NEWTON_DECREMENT_FLOOR {
            // dual decrease below its rounding error: the pure Newton step is
            // already in the quadratic regime and Armijo cannot see it
            lam += &step;
            (w, dual) = weights_at(&lam);
            history.push(dual);
            violation = violation_of(&w);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = &lam + &step * t;
            let (wc, dc) = weights_at(&candidate);
            if dc <= dual + 1e-4 * t * slope {
                lam = candidate;
                w = wc;
                dual = dc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // dual flat to rounding; keep the full step if it improves feasibility
            let candidate = &lam + &step;
            let (wc, dc) = weights_at(&candidate);
            if violation_of(&wc) < violation && dc <= dual + 1e-12 * dual.abs().max(1.0) {
                lam = candidate;
                w = wc;
                dual = dc;
            } else {
                break;
            }
        }
        history.push(dual);
        violation = violation_of(&w);

    }
    if violation > MOMENT_TOLERANCE || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::MomentInfeasible { max_violation: violation });
    }
    Ok(EbalGroup {
        weights: w,
        dual_history: history,
        max_violation: violation,
    })
}

/// Entropy balancing of each treatment group to the chosen moment target.
pub fn entropy_balancing(data: &Dataset, target: EbalTarget, basis: MomentBasis) -> Result<WeightSolution> {
    let groups = data.group_indices();
    let target_rows = match target {
        EbalTarget::SourceMoments => data.source_rows(),
        EbalTarget::TargetMoments => groups.target.clone(),
    };
    let tf = basis.features(data.x(), &target_rows);
    let moments: Vec<f64> = tf.column_iter().map(|c| c.mean()).collect();
    let mut raw = vec![0.0; data.n()];
    for rows in [&groups.treated, &groups.control] {
        let fit = entropy_balance_group(&basis.features(data.x(), rows), &moments)?;
        for (k, &row) in rows.iter().enumerate() {
            raw[row] = fit.weights[k];
        }
    }
    let by_source: Vec<f64> = data.source_rows().iter().map(|&r| raw[r]).collect();
    WeightSolution::normalized(data, &by_source)
}
