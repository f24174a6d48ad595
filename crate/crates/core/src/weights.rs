//! Three-way kernel balancing weights.
//!
//! Minimises
//! `α MMD²(P₁ʷ, P_T) + α MMD²(P₀ʷ, P_T) + (1-α) MMD²(P₁ʷ, P₀ʷ) + λ/n_s² Σ w²`
//! over nonnegative weights that sum to `n_s` within each treatment group.
//! `α = 1` balances each treatment group to the target sample, `α = 0` only
//! balances the treated and control groups to each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::mmd::{GramCache, GroupMmds};
use crate::qp::{self, QpProblem, QpSettings, WarmStart};

/// Relative tolerance of the per-group weight totals.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceHyperparams {
    pub alpha: f64,
    pub lambda: f64,
}

impl BalanceHyperparams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
        }
        Ok(Self { alpha, lambda })
    }
}

/// Weights over the source rows of a dataset, normalised to sum `n_s` within
/// the treated group and within the control group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    /// Dataset row of each weight (source rows, ascending).
    pub rows: Vec<usize>,
    pub w: Vec<f64>,
    pub hyper: Option<BalanceHyperparams>,
    pub objective: Option<f64>,
    pub mmd: Option<GroupMmds>,
    pub ess: f64,
}

impl WeightSolution {
    /// Normalises raw nonnegative weights (indexed like `Dataset::source_rows`)
    /// so that each treatment group sums to `n_s`.
    pub fn normalized(data: &Dataset, raw: &[f64]) -> Result<Self> {
        let rows = data.source_rows();
        if raw.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: raw.len(),
            });
        }
        if let Some(v) = raw.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid raw weight {v}")));
        }
        let ns = rows.len() as f64;
        let (mut s1, mut s0) = (0.0, 0.0);
        for (k, &row) in rows.iter().enumerate() {
            if data.treatment(row) == Some(true) {
                s1 += raw[k];
            } else {
                s0 += raw[k];
            }
        }
        if !(s1 > 0.0 && s0 > 0.0) {
            return Err(Error::InvalidArgument(
                "each treatment group needs positive total weight".into(),
            ));
        }
        let w: Vec<f64> = rows
            .iter()
            .zip(raw)
            .map(|(&row, &v)| {
                if data.treatment(row) == Some(true) {
                    v * ns / s1
                } else {
                    v * ns / s0
                }
            })
            .collect();
        let ess = effective_sample_size(&w);
        Ok(Self {
            rows,
            w,
            hyper: None,
            objective: None,
            mmd: None,
            ess,
        })
    }

    /// Equal weights within each group.
    pub fn uniform(data: &Dataset) -> Self {
        Self::normalized(data, &vec![1.0; data.n_source()]).expect("valid dataset")
    }

    /// Fills the three group discrepancies.
    pub fn with_mmd(mut self, data: &Dataset, cache: &GramCache) -> Self {
        self.mmd = Some(cache.group_mmds(&cache.to_stacked(data, &self.w)));
        self
    }

    /// Checks nonnegativity, group totals and the effective sample size bounds.
    pub fn check_invariants(&self, data: &Dataset) -> Result<()> {
        let ns = data.n_source() as f64;
        if self.w.len() != data.n_source() {
            return Err(Error::DimensionMismatch {
                expected: data.n_source(),
                found: self.w.len(),
            });
        }
        if let Some(v) = self.w.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative weight {v}")));
        }
        let (mut s1, mut s0) = (0.0, 0.0);
        for (&row, &v) in self.rows.iter().zip(&self.w) {
            match data.treatment(row) {
                Some(true) => s1 += v,
                Some(false) => s0 += v,
                None => return Err(Error::InvalidArgument(format!("row {row} is not a source row"))),
            }
        }
        for s in [s1, s0] {
            if ((s - ns) / ns).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "group total {s} differs from {ns}"
                )));
            }
        }
        let ess_direct = 4.0 * ns * ns / self.w.iter().map(|v| v * v).sum::<f64>();
        if !(self.ess > 0.0 && self.ess <= 2.0 * ns * (1.0 + 1e-12))
            || ((self.ess - ess_direct) / ess_direct).abs() > 1e-8
        {
            return Err(Error::InvalidArgument(format!("inconsistent ESS {}", self.ess)));
        }
        Ok(())
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

/// Builds the balancing QP in stacked `[treated; control]` order:
/// `Q = (1/n_s²) [[K₁₁ + λI, (α-1)K₁₀], [(α-1)K₀₁, K₀₀ + λI]]`,
/// `b = α/(n_s n_t) [K₁ₜ1; K₀ₜ1]`, `c = 2α/n_t² 1ᵀK_TT 1`.
pub fn assemble_qp_cached(cache: &GramCache, h: &BalanceHyperparams) -> QpProblem {
    let ns = cache.n_source();
    let n1 = cache.n_treated();
    let nsf = ns as f64;
    let ntf = cache.n_target() as f64;
    let k = cache.source_gram();
    let inv = 1.0 / (nsf * nsf);
    let off = h.alpha - 1.0;
    let mut q = DMatrix::zeros(ns, ns);
    for j in 0..ns {
        for i in 0..ns {
            let same_group = (i < n1) == (j < n1);
            let scale = if same_group { inv } else { off * inv };
            q[(i, j)] = scale * k[(i, j)];
        }
        q[(j, j)] += h.lambda * inv;
    }
    let b: DVector<f64> = cache.source_target_rowsum() * (h.alpha / (nsf * ntf));
    let c = 2.0 * h.alpha / (ntf * ntf) * cache.target_sum();
    let groups = vec![(0..n1).collect(), (n1..ns).collect()];
    QpProblem::new(q, b, c, groups, nsf).expect("balancing QP is well formed")
}

pub fn assemble_qp(data: &Dataset, spec: &KernelSpec, h: &BalanceHyperparams) -> QpProblem {
    assemble_qp_cached(&GramCache::new(data, spec), h)
}

/// Output of one balancing solve, with the solver state needed to warm start
/// the next one.
#[derive(Debug, Clone)]
pub struct BalanceFit {
    pub solution: WeightSolution,
    /// Weights in stacked `[treated; control]` order.
    pub stacked: Vec<f64>,
    pub warm: WarmStart,
    pub iterations: usize,
}

/// Solves balancing problems on one dataset, reusing its kernel blocks.
pub struct BalanceSolver<'a> {
    data: &'a Dataset,
    cache: GramCache,
    pub settings: QpSettings,
}

impl<'a> BalanceSolver<'a> {
    pub fn new(data: &'a Dataset, spec: &KernelSpec) -> Self {
        Self::with_cache(data, GramCache::new(data, spec))
    }

    pub fn with_cache(data: &'a Dataset, cache: GramCache) -> Self {
        Self {
            data,
            cache,
            settings: QpSettings::default(),
        }
    }

    pub fn cache(&self) -> &GramCache {
        &self.cache
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn solve(&self, h: &BalanceHyperparams, warm: Option<&WarmStart>) -> Result<BalanceFit> {
        let problem = assemble_qp_cached(&self.cache, h);
        let sol = qp::solve_qp(&problem, warm, &self.settings)?;
        let n1 = self.cache.n_treated();
        let ns = self.cache.n_source() as f64;
        // exact group totals after the solver's tolerance-level feasibility
        let (s1, s0): (f64, f64) = (sol.w[..n1].iter().sum(), sol.w[n1..].iter().sum());
        let stacked: Vec<f64> = sol
            .w
            .iter()
            .enumerate()
            .map(|(k, &v)| if k < n1 { v * ns / s1 } else { v * ns / s0 })
            .collect();
        let w = self.cache.from_stacked(self.data, &stacked);
        let solution = WeightSolution {
            rows: self.data.source_rows(),
            ess: effective_sample_size(&w),
            w,
            hyper: Some(*h),
            objective: Some(problem.objective(&stacked)),
            mmd: Some(self.cache.group_mmds(&stacked)),
        };
        Ok(BalanceFit {
            solution,
            stacked,
            warm: sol.warm_start(),
            iterations: sol.iterations,
        })
    }
}

/// Solves the balancing program for one hyperparameter pair. The warm start,
/// if given, holds weights indexed like `Dataset::source_rows`.
pub fn solve_balancing_weights(
    data: &Dataset,
    spec: &KernelSpec,
    h: &BalanceHyperparams,
    warm: Option<&[f64]>,
) -> Result<WeightSolution> {
    let solver = BalanceSolver::new(data, spec);
    let warm = warm.map(|w| WarmStart {
        primal: solver.cache().to_stacked(data, w),
        dual: None,
    });
    Ok(solver.solve(h, warm.as_ref())?.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::group_mmds;
    use crate::simulation::{self, Assignment, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn scenario(n: usize, seed: u64) -> (Dataset, KernelSpec) {
        let cfg = ScenarioConfig::new(Assignment::Linear, 0.0, n, seed).unwrap();
        let (d, _) = simulation::generate(&cfg).unwrap();
        let spec = KernelSpec::median_heuristic(d.x()).unwrap();
        (d, spec)
    }

    /// Dirichlet draw per group, scaled to sum `n_s`.
    fn random_feasible(d: &Dataset, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..d.n_source()).map(|_| Exp1.sample(rng)).collect();
        WeightSolution::normalized(d, &raw).unwrap().w
    }

    #[test]
    fn objective_identity_with_group_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, spec) = scenario(60, 1);
        let cache = GramCache::new(&d, &spec);
        let ns = d.n_source() as f64;
        for _ in 0..10 {
            let h = BalanceHyperparams::new(rng.gen_range(0.0..1.0), rng.gen_range(0.01..5.0)).unwrap();
            let problem = assemble_qp_cached(&cache, &h);
            let w = random_feasible(&d, &mut rng);
            let m = group_mmds(&d, &w, &spec).unwrap();
            let penalty = h.lambda / (ns * ns) * w.iter().map(|v| v * v).sum::<f64>();
            let expected = h.alpha * m.t1 + h.alpha * m.t0 + (1.0 - h.alpha) * m.between + penalty;
            let got = problem.objective(&cache.to_stacked(&d, &w));
            assert!((got - expected).abs() <= 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn alpha_endpoints_shape_the_problem() {
        let (d, spec) = scenario(40, 2);
        let cache = GramCache::new(&d, &spec);
        let n1 = cache.n_treated();
        let ns = cache.n_source();
        let one = assemble_qp_cached(&cache, &BalanceHyperparams::new(1.0, 0.5).unwrap());
        for i in 0..n1 {
            for j in n1..ns {
                assert_eq!(one.q()[(i, j)], 0.0);
                assert_eq!(one.q()[(j, i)], 0.0);
            }
        }
        let zero = assemble_qp_cached(&cache, &BalanceHyperparams::new(0.0, 0.5).unwrap());
        assert!(zero.b().iter().all(|&v| v == 0.0));
        assert_eq!(zero.c(), 0.0);
        assert!(BalanceHyperparams::new(1.1, 1.0).is_err());
        assert!(BalanceHyperparams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn huge_penalty_gives_uniform_weights() {
        let (d, spec) = scenario(80, 3);
        let w = solve_balancing_weights(&d, &spec, &BalanceHyperparams::new(0.5, 1e9).unwrap(), None).unwrap();
        let uniform = WeightSolution::uniform(&d);
        let gap = w.w.iter().zip(&uniform.w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-3, "{gap}");
        w.check_invariants(&d).unwrap();
    }

    #[test]
    fn copied_samples_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut rows = Vec::new();
        for _ in 0..3 {
            rows.extend_from_slice(&base);
        }
        let x = DMatrix::from_row_slice(15, 2, &rows);
        let s: Vec<bool> = (0..15).map(|i| i < 10).collect();
        let a: Vec<Option<bool>> = (0..15).map(|i| if i < 10 { Some(i < 5) } else { None }).collect();
        let d = Dataset::new(x, s, a, vec![Some(1.0); 15]).unwrap();
        let spec = KernelSpec::median_heuristic(d.x()).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let w = solve_balancing_weights(&d, &spec, &BalanceHyperparams::new(alpha, 0.1).unwrap(), None).unwrap();
            for v in &w.w {
                assert!((v - 2.0).abs() < 1e-4, "{:?}", w.w);
            }
        }
    }

    #[test]
    fn solution_beats_competitors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let cfg = ScenarioConfig::new(Assignment::Linear, 0.0, 60, 100 + seed).unwrap();
            let (d, oracle) = simulation::generate(&cfg).unwrap();
            let spec = KernelSpec::median_heuristic(d.x()).unwrap();
            let cache = GramCache::new(&d, &spec);
            let h = BalanceHyperparams::new(rng.gen_range(0.0..1.0), 0.1).unwrap();
            let solver = BalanceSolver::with_cache(&d, cache.clone());
            let fit = solver.solve(&h, None).unwrap();
            fit.solution.check_invariants(&d).unwrap();
            let problem = assemble_qp_cached(&cache, &h);
            let best = problem.objective(&fit.stacked);
            let raw: Vec<f64> = d
                .source_rows()
                .iter()
                .map(|&r| {
                    let x: Vec<f64> = d.x().row(r).iter().copied().collect();
                    oracle.importance_weight(d.treatment(r).unwrap(), &x, 0.5)
                })
                .collect();
            let importance = WeightSolution::normalized(&d, &raw).unwrap();
            let mut competitors = vec![WeightSolution::uniform(&d).w, importance.w];
            for _ in 0..100 {
                competitors.push(random_feasible(&d, &mut rng));
            }
            for w in competitors {
                assert!(best <= problem.objective(&cache.to_stacked(&d, &w)) + 1e-9);
            }
            let m = fit.solution.mmd.unwrap();
            assert!(m.between.sqrt() <= m.t1.sqrt() + m.t0.sqrt() + 1e-12);
        }
    }

    #[test]
    fn invariant_checks_catch_violations() {
        let (d, _) = scenario(40, 6);
        let mut w = WeightSolution::uniform(&d);
        w.check_invariants(&d).unwrap();
        let g = d.group_indices();
        let harmonic = 4.0 / (1.0 / g.treated.len() as f64 + 1.0 / g.control.len() as f64);
        assert!((w.ess - harmonic).abs() < 1e-9);
        w.w[0] *= 1.1;
        assert!(w.check_invariants(&d).is_err());
        assert!(WeightSolution::normalized(&d, &vec![-1.0; d.n_source()]).is_err());
    }
}
