//! Convex QP `minimize wᵀQw - 2bᵀw + c` subject to `Σ_{i∈G} w_i = r` for each
//! group `G` of a partition of the variables, and `w ≥ 0`.
//!
//! Solved by relaxed ADMM on the splitting `x = z`: the `x`-step is an
//! unconstrained quadratic solve against a cached Cholesky factor of
//! `2Q + ρI`, the `z`-step is an exact Euclidean projection onto the product of
//! scaled simplices. Convergence is declared from the KKT residuals of the
//! (always feasible) `z` iterate, so the reported residuals certify the
//! returned point rather than the internal splitting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    q: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    groups: Vec<Vec<usize>>,
    rhs: f64,
}

impl QpProblem {
    pub fn new(
        q: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
        groups: Vec<Vec<usize>>,
        rhs: f64,
    ) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: q.ncols(),
            });
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let scale = q.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "Q is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if !(rhs > 0.0) {
            return Err(Error::Infeasible(format!("group total {rhs} must be positive")));
        }
        let mut seen = vec![false; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Infeasible("empty equality group".into()));
            }
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::InvalidArgument(
                        "equality groups must partition the variables".into(),
                    ));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "equality groups must partition the variables".into(),
            ));
        }
        Ok(Self {
            q,
            b,
            c,
            groups,
            rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (&self.q * &w).dot(&w) - 2.0 * self.b.dot(&w) + self.c
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let mut buf = Vec::new();
        for g in &self.groups {
            buf.clear();
            buf.extend(g.iter().map(|&i| v[i]));
            project_simplex(&mut buf, self.rhs);
            for (k, &i) in g.iter().enumerate() {
                out[i] = buf[k];
            }
        }
        out
    }

    /// Primal and stationarity residuals of `w`.
    pub fn kkt_residuals(&self, w: &[f64]) -> KktResiduals {
        let wv = DVector::from_column_slice(w);
        let grad = 2.0 * (&self.q * &wv) - 2.0 * &self.b;
        self.kkt_from_gradient(w, grad.as_slice())
    }

    fn kkt_from_gradient(&self, w: &[f64], grad: &[f64]) -> KktResiduals {
        let mut primal = w.iter().fold(0.0f64, |m, &v| m.max(-v));
        let mut dual = 0.0f64;
        for g in &self.groups {
            let sum: f64 = g.iter().map(|&i| w[i]).sum();
            primal = primal.max((sum - self.rhs).abs());
            // With ν the group multiplier, stationarity needs grad_i = ν on the
            // support and grad_i ≥ ν off it. The best ν leaves a residual of
            // (max over support - min over all) / 2.
            let min_all = g.iter().map(|&i| grad[i]).fold(f64::INFINITY, f64::min);
            let max_free = g
                .iter()
                .filter(|&&i| w[i] > 0.0)
                .map(|&i| grad[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max_free.is_finite() {
                dual = dual.max(0.5 * (max_free - min_all));
            }
        }
        KktResiduals { primal, dual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
}

/// In-place projection of `v` onto `{x ≥ 0, Σx = total}`.
pub fn project_simplex(v: &mut [f64], total: f64) {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - total) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    /// Penalty parameter; defaults to `3 · tr(2Q) / n`.
    pub rho: Option<f64>,
    pub relaxation: f64,
    pub check_every: usize,
    /// Record the per-iteration objective and fixed-point residual.
    pub trace: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            max_iter: 50_000,
            rho: None,
            relaxation: 1.6,
            check_every: 5,
            trace: false,
        }
    }
}

/// Primal point and ADMM dual (`y = ρu`) from an earlier solve.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub primal: Vec<f64>,
    pub dual: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Scaled ADMM dual, reusable as a warm start.
    pub dual: Vec<f64>,
    /// Per-iteration `(objective, fixed-point residual)` when tracing.
    pub history: Vec<(f64, f64)>,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            primal: self.w.clone(),
            dual: Some(self.dual.clone()),
        }
    }
}

pub fn solve_qp(
    problem: &QpProblem,
    warm: Option<&WarmStart>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    let n = problem.dim();
    let rho = settings
        .rho
        .unwrap_or_else(|| 3.0 * 2.0 * problem.q.trace() / n as f64);
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("penalty {rho} must be positive")));
    }
    let mut m = 2.0 * &problem.q;
    for i in 0..n {
        m[(i, i)] += rho;
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(m)
        .ok_or_else(|| Error::InvalidArgument("2Q + ρI is not positive definite".into()))?;

    let two_b = 2.0 * &problem.b;
    let mut z = match warm {
        Some(ws) if ws.primal.len() == n => problem.project(&ws.primal),
        _ => {
            let mut z = vec![0.0; n];
            for g in &problem.groups {
                for &i in g {
                    z[i] = problem.rhs / g.len() as f64;
                }
            }
            z
        }
    };
    let mut u = match warm.and_then(|ws| ws.dual.as_ref()) {
        Some(y) if y.len() == n => y.iter().map(|v| v / rho).collect(),
        _ => vec![0.0; n],
    };
    let sigma = settings.relaxation;
    let mut rhs = DVector::zeros(n);
    let mut xh_plus_u = vec![0.0; n];
    let mut history = Vec::new();
    let mut last = problem.kkt_residuals(&z);
    if last.primal <= settings.tol_primal && last.dual <= settings.tol_dual {
        return Ok(finish(problem, z, u, rho, last, 0, history));
    }

    for iter in 1..=settings.max_iter {
        for i in 0..n {
            rhs[i] = two_b[i] + rho * (z[i] - u[i]);
        }
        chol.solve_mut(&mut rhs);
        for i in 0..n {
            let xh = sigma * rhs[i] + (1.0 - sigma) * z[i];
            xh_plus_u[i] = xh + u[i];
        }
        let z_new = problem.project(&xh_plus_u);
        let mut fixed_point = 0.0f64;
        for i in 0..n {
            let xh = xh_plus_u[i] - u[i];
            let du = xh - z_new[i];
            fixed_point += (z_new[i] - z[i]).powi(2) + du * du;
            u[i] += du;
        }
        let fixed_point = fixed_point.sqrt();
        z = z_new;
        if settings.trace {
            history.push((problem.objective(&z), fixed_point));
        }
        if iter % settings.check_every == 0 || iter == settings.max_iter {
            last = problem.kkt_residuals(&z);
            if last.primal <= settings.tol_primal && last.dual <= settings.tol_dual {
                return Ok(finish(problem, z, u, rho, last, iter, history));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: settings.max_iter,
        primal_residual: last.primal,
        dual_residual: last.dual,
    })
}

fn finish(
    problem: &QpProblem,
    w: Vec<f64>,
    u: Vec<f64>,
    rho: f64,
    kkt: KktResiduals,
    iterations: usize,
    history: Vec<(f64, f64)>,
) -> QpSolution {
    QpSolution {
        objective: problem.objective(&w),
        w,
        primal_residual: kkt.primal,
        dual_residual: kkt.dual,
        iterations,
        dual: u.into_iter().map(|v| v * rho).collect(),
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_groups(n1: usize, n0: usize) -> Vec<Vec<usize>> {
        vec![(0..n1).collect(), (n1..n1 + n0).collect()]
    }

    #[test]
    fn identity_hessian_gives_uniform_groups() {
        let (n1, n0) = (3, 5);
        let n = n1 + n0;
        let p = QpProblem::new(
            DMatrix::identity(n, n),
            DVector::zeros(n),
            0.0,
            two_groups(n1, n0),
            n as f64,
        )
        .unwrap();
        let sol = solve_qp(&p, None, &QpSettings::default()).unwrap();
        for i in 0..n1 {
            assert!((sol.w[i] - n as f64 / n1 as f64).abs() < 1e-7);
        }
        for i in n1..n {
            assert!((sol.w[i] - n as f64 / n0 as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn two_variable_lagrange_solution() {
        let p = QpProblem::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            DVector::zeros(2),
            0.0,
            vec![vec![0, 1]],
            2.0,
        )
        .unwrap();
        let sol = solve_qp(&p, None, &QpSettings::default()).unwrap();
        assert!((sol.w[0] - 4.0 / 3.0).abs() < 1e-6);
        assert!((sol.w[1] - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_group_is_infeasible() {
        let r = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.0,
            vec![vec![0, 1], vec![]],
            2.0,
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn non_partition_is_rejected() {
        let r = QpProblem::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            0.0,
            vec![vec![0, 1], vec![1]],
            2.0,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn iteration_cap_reports_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = a.transpose() * &a + DMatrix::identity(n, n) * 1e-3;
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let p = QpProblem::new(q, b, 0.0, two_groups(10, 10), 20.0).unwrap();
        let settings = QpSettings {
            max_iter: 3,
            ..QpSettings::default()
        };
        match solve_qp(&p, None, &settings) {
            Err(Error::NotConverged { iterations, .. }) => assert_eq!(iterations, 3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn simplex_projection_examples() {
        let mut v = vec![0.5, 0.5];
        project_simplex(&mut v, 1.0);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![3.0, 0.0, -1.0];
        project_simplex(&mut v, 1.0);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        let mut v = vec![1.0, 1.0, 1.0];
        project_simplex(&mut v, 6.0);
        assert_eq!(v, vec![2.0, 2.0, 2.0]);
    }

    fn random_problem(seed: u64, n1: usize, n0: usize) -> QpProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n1 + n0;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = a.transpose() * &a / n as f64 + DMatrix::identity(n, n) * 0.1;
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        QpProblem::new(q, b, 0.0, two_groups(n1, n0), n as f64).unwrap()
    }

    #[test]
    fn solution_satisfies_kkt_and_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..10 {
            let p = random_problem(seed, 7, 9);
            let sol = solve_qp(&p, None, &QpSettings::default()).unwrap();
            assert!(sol.primal_residual <= 1e-7 && sol.dual_residual <= 1e-7);
            assert!(sol.w.iter().all(|&w| w >= 0.0));
            for _ in 0..100 {
                let draw: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..3.0)).collect();
                let feasible = p.project(&draw);
                assert!(p.objective(&feasible) >= sol.objective - 1e-9);
            }
        }
    }

    #[test]
    fn fixed_point_residual_is_nonincreasing() {
        // the ADMM fixed-point residual ‖(Δz, Δu)‖ is monotone at fixed ρ;
        // the objective of the projected iterate need not be
        for seed in 0..5 {
            let p = random_problem(seed, 6, 6);
            let settings = QpSettings {
                trace: true,
                relaxation: 1.0,
                check_every: 1,
                tol_primal: 1e-10,
                tol_dual: 1e-10,
                ..QpSettings::default()
            };
            let history = solve_qp(&p, None, &settings).unwrap().history;
            assert!(history.len() > 2);
            for pair in history.windows(2) {
                assert!(pair[1].1 <= pair[0].1 * (1.0 + 1e-9) + 1e-13);
            }
        }
    }

    #[test]
    fn warm_start_from_nearby_problem_saves_iterations() {
        let mut faster = 0;
        for seed in 0..20 {
            let p = random_problem(100 + seed, 10, 10);
            let cold = solve_qp(&p, None, &QpSettings::default()).unwrap();
            let perturbed = QpProblem::new(
                p.q().clone() * 1.01,
                p.b().clone(),
                0.0,
                p.groups().to_vec(),
                p.rhs(),
            )
            .unwrap();
            let warm_sol = solve_qp(&perturbed, Some(&cold.warm_start()), &QpSettings::default()).unwrap();
            let cold_sol = solve_qp(&perturbed, None, &QpSettings::default()).unwrap();
            if warm_sol.iterations < cold_sol.iterations {
                faster += 1;
            }
        }
        // informational; most trials should benefit
        assert!(faster >= 10, "warm start faster in only {faster}/20 trials");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 1usize..15) {
            let p = random_problem(seed, 8, 7);
            let n = p.dim();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            // variable k of the permuted problem is variable perm[k] of the original
            let q = DMatrix::from_fn(n, n, |i, j| p.q()[(perm[i], perm[j])]);
            let b = DVector::from_fn(n, |i, _| p.b()[perm[i]]);
            let mut inv = vec![0; n];
            for (k, &i) in perm.iter().enumerate() { inv[i] = k; }
            let groups = p.groups().iter().map(|g| g.iter().map(|&i| inv[i]).collect()).collect();
            let pp = QpProblem::new(q, b, 0.0, groups, p.rhs()).unwrap();
            let s1 = solve_qp(&p, None, &QpSettings::default()).unwrap();
            let s2 = solve_qp(&pp, None, &QpSettings::default()).unwrap();
            for k in 0..n {
                prop_assert!((s2.w[k] - s1.w[perm[k]]).abs() < 1e-5);
            }
        }

        #[test]
        fn projection_is_feasible_and_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..30), total in 0.1f64..50.0) {
            let mut x = v.clone();
            project_simplex(&mut x, total);
            prop_assert!(x.iter().all(|&e| e >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - total).abs() < 1e-9 * total.max(1.0));
            let mut y = x.clone();
            project_simplex(&mut y, total);
            for (a, b) in x.iter().zip(&y) { prop_assert!((a - b).abs() < 1e-12 * total.max(1.0)); }
        }
    }
}
