//! Squared maximum mean discrepancy between weighted empirical distributions.
//!
//! For `P = Σ p_i δ_{x_i}` and `Q = Σ q_j δ_{y_j}`,
//! `MMD²(P, Q) = Σ p p' K(x, x') + Σ q q' K(y, y') - 2 Σ p q K(x, y)`
//! (biased V-statistic form).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{self, KernelSpec};

/// Tolerance on the total mass of a [`WeightedSample`].
pub const MASS_TOLERANCE: f64 = 1e-10;

/// A discrete probability distribution supported on the rows of `points`.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    points: DMatrix<f64>,
    mass: Vec<f64>,
}

impl WeightedSample {
    pub fn new(points: DMatrix<f64>, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                found: mass.len(),
            });
        }
        if let Some(m) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidMass(format!("negative or non-finite mass {m}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMass(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { points, mass })
    }

    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let m = points.nrows();
        Self::new(points, vec![1.0 / m as f64; m])
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

/// Squared MMD between two weighted samples, clamped at zero.
pub fn mmd_squared(p: &WeightedSample, q: &WeightedSample, spec: &KernelSpec) -> Result<f64> {
    let kpp = kernel::gram(&p.points, &p.points, spec)?;
    let kqq = kernel::gram(&q.points, &q.points, spec)?;
    let kpq = kernel::gram(&p.points, &q.points, spec)?;
    let (pm, qm) = (
        DVector::from_column_slice(&p.mass),
        DVector::from_column_slice(&q.mass),
    );
    let value = kpp.dot(&(&pm * pm.transpose())) + kqq.dot(&(&qm * qm.transpose()))
        - 2.0 * kpq.dot(&(&pm * qm.transpose()));
    Ok(value.max(0.0))
}

/// The three squared discrepancies that enter the balancing objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMmds {
    /// weighted treated vs target
    pub t1: f64,
    /// weighted control vs target
    pub t0: f64,
    /// weighted treated vs weighted control
    pub between: f64,
}

/// Kernel blocks for one dataset, shared across every hyperparameter pair.
///
/// Source rows are stacked as `[treated; control]`.
#[derive(Debug, Clone)]
pub struct GramCache {
    spec: KernelSpec,
    order: Vec<usize>,
    n_treated: usize,
    n_target: usize,
    source: DMatrix<f64>,
    source_target_rowsum: DVector<f64>,
    target_sum: f64,
}

impl GramCache {
    pub fn new(data: &Dataset, spec: &KernelSpec) -> Self {
        let groups = data.group_indices();
        let mut order = groups.treated.clone();
        order.extend(&groups.control);
        let xs = data.select_rows(&order);
        let xt = data.select_rows(&groups.target);
        let source = kernel::gram_symmetric(&xs, spec);
        let cross = kernel::gram(&xs, &xt, spec).expect("same covariate dimension");
        let source_target_rowsum = DVector::from_iterator(
            cross.nrows(),
            cross.row_iter().map(|r| r.sum()),
        );
        let target_sum = kernel::gram_symmetric(&xt, spec).sum();
        Self {
            spec: *spec,
            order,
            n_treated: groups.treated.len(),
            n_target: groups.target.len(),
            source,
            source_target_rowsum,
            target_sum,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Dataset rows in stacked order `[treated; control]`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.order.len() - self.n_treated
    }

    pub fn n_source(&self) -> usize {
        self.order.len()
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// `K_SS` in stacked order.
    pub fn source_gram(&self) -> &DMatrix<f64> {
        &self.source
    }

    /// `K_ST 1`, the row sums of the source-by-target block.
    pub fn source_target_rowsum(&self) -> &DVector<f64> {
        &self.source_target_rowsum
    }

    /// `1ᵀ K_TT 1`.
    pub fn target_sum(&self) -> f64 {
        self.target_sum
    }

    /// Permutes a vector indexed like `Dataset::source_rows` into stacked order.
    pub fn to_stacked(&self, data: &Dataset, by_source_row: &[f64]) -> Vec<f64> {
        let pos = source_positions(data);
        self.order.iter().map(|&row| by_source_row[pos[row]]).collect()
    }

    /// Inverse of [`GramCache::to_stacked`].
    pub fn from_stacked(&self, data: &Dataset, stacked: &[f64]) -> Vec<f64> {
        let pos = source_positions(data);
        let mut out = vec![0.0; stacked.len()];
        for (k, &row) in self.order.iter().enumerate() {
            out[pos[row]] = stacked[k];
        }
        out
    }

    /// Group discrepancies for stacked weights normalised to sum `n_s` per group.
    pub fn group_mmds(&self, stacked_weights: &[f64]) -> GroupMmds {
        let ns = self.n_source() as f64;
        let nt = self.n_target as f64;
        let n1 = self.n_treated;
        let mass = DVector::from_iterator(
            stacked_weights.len(),
            stacked_weights.iter().map(|w| w / ns),
        );
        let n0 = self.n_source() - n1;
        let k1p1 = self.source.columns(0, n1) * mass.rows(0, n1);
        let k0p0 = self.source.columns(n1, n0) * mass.rows(n1, n0);
        let a11 = mass.rows(0, n1).dot(&k1p1.rows(0, n1));
        let a00 = mass.rows(n1, n0).dot(&k0p0.rows(n1, n0));
        let a10 = mass.rows(n1, n0).dot(&k1p1.rows(n1, n0));
        let tt = self.target_sum / (nt * nt);
        let st1: f64 = (0..n1).map(|i| mass[i] * self.source_target_rowsum[i]).sum::<f64>() / nt;
        let st0: f64 = (n1..self.n_source())
            .map(|i| mass[i] * self.source_target_rowsum[i])
            .sum::<f64>()
            / nt;
        GroupMmds {
            t1: (a11 + tt - 2.0 * st1).max(0.0),
            t0: (a00 + tt - 2.0 * st0).max(0.0),
            between: (a11 + a00 - 2.0 * a10).max(0.0),
        }
    }

    /// Treated-versus-control squared MMD of stacked weights restricted to
    /// `subset` (stacked positions) and renormalised within each group.
    pub fn between_mmd_on(&self, stacked_weights: &[f64], subset: &[usize]) -> f64 {
        let n1 = self.n_treated;
        let (mut s1, mut s0) = (0.0, 0.0);
        for &k in subset {
            if k < n1 {
                s1 += stacked_weights[k];
            } else {
                s0 += stacked_weights[k];
            }
        }
        if s1 <= 0.0 || s0 <= 0.0 {
            return f64::INFINITY;
        }
        // signed masses: +p on treated, -p on control, zero off the subset, so qᵀKq is the MMD²
        let mut signed = DVector::zeros(self.n_source());
        for &k in subset {
            signed[k] = if k < n1 {
                stacked_weights[k] / s1
            } else {
                -stacked_weights[k] / s0
            };
        }
        let total = signed.dot(&(&self.source * &signed));
        total.max(0.0)
    }
}

fn source_positions(data: &Dataset) -> Vec<usize> {
    let mut pos = vec![usize::MAX; data.n()];
    for (k, row) in data.source_rows().into_iter().enumerate() {
        pos[row] = k;
    }
    pos
}

/// Group discrepancies for weights indexed like `Dataset::source_rows`.
pub fn group_mmds(data: &Dataset, weights: &[f64], spec: &KernelSpec) -> Result<GroupMmds> {
    if weights.len() != data.n_source() {
        return Err(Error::DimensionMismatch {
            expected: data.n_source(),
            found: weights.len(),
        });
    }
    let cache = GramCache::new(data, spec);
    Ok(cache.group_mmds(&cache.to_stacked(data, weights)))
}
