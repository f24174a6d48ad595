//! Weighted ridge-penalised logistic regression by damped Newton.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stopping tolerance on the ∞-norm of the gradient.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITER: usize = 200;

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

struct Problem<'a> {
    design: DMatrix<f64>,
    y: Vec<f64>,
    s: &'a [f64],
    ridge: f64,
}

impl Problem<'_> {
    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.design * beta
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.eta(beta);
        let nll: f64 = (0..self.y.len())
            .map(|i| self.s[i] * (softplus(eta[i]) - self.y[i] * eta[i]))
            .sum();
        nll + 0.5 * self.ridge * beta.rows(1, beta.len() - 1).norm_squared()
    }

    fn gradient_hessian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = self.eta(beta);
        let k = beta.len();
        let mut resid = DVector::zeros(self.y.len());
        let mut scaled = self.design.clone();
        for i in 0..self.y.len() {
            let p = sigmoid(eta[i]);
            resid[i] = self.s[i] * (p - self.y[i]);
            let h = self.s[i] * p * (1.0 - p);
            scaled.row_mut(i).scale_mut(h);
        }
        let mut grad = self.design.tr_mul(&resid);
        let mut hess = self.design.tr_mul(&scaled);
        for j in 1..k {
            grad[j] += self.ridge * beta[j];
            hess[(j, j)] += self.ridge;
        }
        (grad, hess)
    }
}

/// Fits `P(y = 1 | x) = sigmoid(β₀ + xᵀβ)` by minimising
/// `Σ sᵢ ℓ(yᵢ, ηᵢ) + (ridge/2) ‖β‖²` with the intercept unpenalised.
/// Returns `[β₀, β₁, …, β_p]`.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[bool],
    sample_weight: Option<&[f64]>,
    ridge: f64,
) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be nonnegative")));
    }
    let ones = vec![1.0; n];
    let s = sample_weight.unwrap_or(&ones);
    if s.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.len(),
        });
    }
    if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("sample weights must be finite and nonnegative".into()));
    }
    let has = |label: bool| (0..n).any(|i| y[i] == label && s[i] > 0.0);
    if !has(true) || !has(false) {
        return Err(Error::InvalidArgument(
            "logistic fit needs at least one positive and one negative label".into(),
        ));
    }
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(x);
    let problem = Problem {
        design,
        y: y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        s,
        ridge,
    };

    let mut beta = DVector::zeros(p + 1);
    let mut f = problem.objective(&beta);
    let mut converged = false;
    let mut polish = 0;
    for _ in 0..MAX_ITER {
        let (grad, hess) = problem.gradient_hessian(&beta);
        let gnorm = grad.amax();
        if gnorm <= GRADIENT_TOLERANCE {
            converged = true;
            // two extra full Newton steps take the iterate to machine precision
            if polish == 2 {
                break;
            }
            polish += 1;
        }
        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&(-&grad)),
            // rank-deficient design: minimum-norm Newton direction
            None => match hess.svd(true, true).solve(&(-&grad), 1e-12) {
                Ok(step) => step,
                Err(_) if ridge == 0.0 => return Err(Error::Separation),
                Err(_) => {
                    return Err(Error::NotConverged {
                        iterations: 0,
                        primal_residual: gnorm,
                        dual_residual: f64::NAN,
                    });
                }
            },
        };
        let slope = grad.dot(&step);
        if -slope <= 1e-12 * (1.0 + f.abs()) {
            // inside the quadratic region the objective is flat to rounding
            beta += &step;
            f = problem.objective(&beta);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &beta + &step * t;
            let fc = problem.objective(&candidate);
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((candidate, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((b, fc)) => {
                beta = b;
                f = fc;
            }
            None if converged => break,
            None => {
                // objective flat to rounding: take the full step if it shrinks the gradient
                let candidate = &beta + &step;
                let (g2, _) = problem.gradient_hessian(&candidate);
                if g2.amax() < gnorm {
                    f = problem.objective(&candidate);
                    beta = candidate;
                } else {
                    break;
                }
            }
        }
    }
    let (grad, _) = problem.gradient_hessian(&beta);
    if ridge == 0.0 && separated(&problem, &beta) {
        return Err(Error::Separation);
    }
    if !converged && grad.amax() > GRADIENT_TOLERANCE {
        if ridge == 0.0 {
            return Err(Error::Separation);
        }
        return Err(Error::NotConverged {
            iterations: MAX_ITER,
            primal_residual: grad.amax(),
            dual_residual: f64::NAN,
        });
    }
    Ok(beta.iter().copied().collect())
}

/// Every weighted point fitted almost perfectly: the unpenalised optimum is at infinity.
fn separated(problem: &Problem, beta: &DVector<f64>) -> bool {
    let eta = problem.eta(beta);
    (0..problem.y.len())
        .filter(|&i| problem.s[i] > 0.0)
        .all(|i| (sigmoid(eta[i]) - problem.y[i]).abs() < 1e-6)
}

/// Prediction for one covariate row.
pub fn predict(coef: &[f64], x: &[f64]) -> f64 {
    sigmoid(coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gradient(x: &DMatrix<f64>, y: &[bool], s: &[f64], ridge: f64, coef: &[f64]) -> Vec<f64> {
        let (n, p) = x.shape();
        let mut g = vec![0.0; p + 1];
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let r = s[i] * (predict(coef, &row) - if y[i] { 1.0 } else { 0.0 });
            g[0] += r;
            for j in 0..p {
                g[j + 1] += r * row[j];
            }
        }
        for j in 1..=p {
            g[j] += ridge * coef[j];
        }
        g
    }

    /// Iteratively reweighted least squares with plain Gaussian elimination.
    fn irls(x: &DMatrix<f64>, y: &[bool], s: &[f64], ridge: f64) -> Vec<f64> {
        let (n, p) = x.shape();
        let k = p + 1;
        let mut beta = vec![0.0; k];
        for _ in 0..100 {
            let mut a = vec![vec![0.0; k + 1]; k];
            for i in 0..n {
                let row: Vec<f64> = std::iter::once(1.0).chain(x.row(i).iter().copied()).collect();
                let eta: f64 = row.iter().zip(&beta).map(|(u, v)| u * v).sum();
                let mu = 1.0 / (1.0 + (-eta).exp());
                let wgt = s[i] * mu * (1.0 - mu);
                let z = eta + ((if y[i] { 1.0 } else { 0.0 }) - mu) / (mu * (1.0 - mu));
                for r in 0..k {
                    for c in 0..k {
                        a[r][c] += wgt * row[r] * row[c];
                    }
                    a[r][k] += wgt * row[r] * z;
                }
            }
            for j in 1..k {
                a[j][j] += ridge;
            }
            for col in 0..k {
                let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
                a.swap(col, piv);
                for r in 0..k {
                    if r != col {
                        let f = a[r][col] / a[col][col];
                        for c in col..=k {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
            beta = (0..k).map(|j| a[j][k] / a[j][j]).collect();
        }
        beta
    }

    #[test]
    fn balanced_labels_without_signal() {
        let x = DMatrix::zeros(6, 2);
        let y = [true, false, true, false, true, false];
        let coef = fit_logistic(&x, &y, None, 0.0).unwrap();
        assert!(coef.iter().all(|c| c.abs() < 1e-12), "{coef:?}");
    }

    #[test]
    fn ridge_handles_separation() {
        let xs = [-2.0, -1.5, -0.5, 0.5, 1.0, 2.0];
        let x = DMatrix::from_column_slice(6, 1, &xs);
        let y: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        assert!(matches!(fit_logistic(&x, &y, None, 0.0), Err(Error::Separation)));
        let coef = fit_logistic(&x, &y, None, 0.1).unwrap();
        assert!(coef.iter().all(|c| c.is_finite()));
        let g = gradient(&x, &y, &[1.0; 6], 0.1, &coef);
        assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
    }

    #[test]
    fn six_point_instance_matches_irls() {
        let x = DMatrix::from_row_slice(6, 2, &[
            0.3, -1.2, 1.1, 0.4, -0.7, 0.9, 0.2, 0.1, -1.5, -0.3, 0.8, 1.7,
        ]);
        let y = [true, false, true, false, true, true];
        let s = [1.0, 0.5, 2.0, 1.0, 1.5, 0.7];
        for ridge in [0.0, 0.3] {
            let coef = fit_logistic(&x, &y, Some(&s), ridge).unwrap();
            let oracle = irls(&x, &y, &s, ridge);
            for (a, b) in coef.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12, "{coef:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn random_fits_reach_gradient_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = 200;
            let x = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0));
            let y: Vec<bool> = (0..n)
                .map(|i| rng.gen_bool(sigmoid(0.5 + x[(i, 0)] - 0.7 * x[(i, 2)])))
                .collect();
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
            let coef = fit_logistic(&x, &y, Some(&s), 1e-4).unwrap();
            let g = gradient(&x, &y, &s, 1e-4, &coef);
            assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = DMatrix::zeros(3, 1);
        assert!(fit_logistic(&x, &[true, true, true], None, 1.0).is_err());
    }
}
