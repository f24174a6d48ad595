//! Simulation designs with known propensity, participation and outcome
//! functions, target-population test samples and the optimal linear rule.
//!
//! Covariates are uniform on `[-2, 2]⁴`, `ρ(x) = G(x₂ - 1.2x₁)` with
//! `G(z) = 0.8 Φ(z) + 0.1`, and `Y = m(X) + (A - 0.5) τ(X) + ε`, `ε ~ N(0, 0.5²)`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::itr::LinearRule;
use crate::rng::stream_rng;

pub const DIM: usize = 4;
pub const NOISE_SD: f64 = 0.5;
pub const DEFAULT_N: usize = 1600;

const STREAM_COVARIATES: u64 = 0;
const STREAM_POPULATION: u64 = 1;
const STREAM_TREATMENT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_TEST: u64 = 4;

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `G(z) = 0.8 Φ(z) + 0.1`, a link with range `(0.1, 0.9)`.
pub fn link(z: f64) -> f64 {
    0.8 * normal_cdf(z) + 0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Linear,
    LinearBadOverlap,
    Nonlinear,
}

impl Assignment {
    pub const ALL: [Assignment; 3] = [Self::Linear, Self::LinearBadOverlap, Self::Nonlinear];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::LinearBadOverlap => "linear_bad_overlap",
            Self::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{s}`")))
    }
}

fn default_n() -> usize {
    DEFAULT_N
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub assignment: Assignment,
    pub kappa: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(assignment: Assignment, kappa: f64, n: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            assignment,
            kappa,
            n,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidArgument(format!("n = {} is below 4", self.n)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::InvalidArgument(format!("kappa {} outside [0, 1]", self.kappa)));
        }
        Ok(())
    }

    pub fn oracle(&self) -> OracleFunctions {
        OracleFunctions::new(self.assignment, self.kappa)
    }
}

/// The true nuisance and outcome functions of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFunctions {
    pub assignment: Assignment,
    pub kappa: f64,
    /// Replaces `τ` by a constant (for degenerate-effect checks).
    pub constant_tau: Option<f64>,
}

impl OracleFunctions {
    pub fn new(assignment: Assignment, kappa: f64) -> Self {
        Self {
            assignment,
            kappa,
            constant_tau: None,
        }
    }

    pub fn with_constant_tau(mut self, tau: f64) -> Self {
        self.constant_tau = Some(tau);
        self
    }

    /// Propensity `π(x)`.
    pub fn pi(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        match self.assignment {
            Assignment::Linear => link(0.5 * x1 + 0.3 * x2 - 0.3),
            Assignment::LinearBadOverlap => link(1.6 * x1 + 1.3 * x2 - 0.8),
            Assignment::Nonlinear => link(
                0.4 * x1 * x1 + 0.4 * x2 * x2 + 0.5 * x1 * x2 - 0.4 * x1 + 0.4 * x2 - 0.9,
            ),
        }
    }

    /// Participation probability `ρ(x)`.
    pub fn rho(&self, x: &[f64]) -> f64 {
        link(x[1] - 1.2 * x[0])
    }

    /// Main effect.
    pub fn m(&self, x: &[f64]) -> f64 {
        normal_cdf(-0.6 * x[0] - 0.6 * x[1] + 0.2 * x[2] + 0.5) + 0.5
    }

    pub fn tau_linear(x: &[f64]) -> f64 {
        normal_cdf(0.4 * x[1] + 0.6 * x[0]) - 0.5
    }

    pub fn tau_nonlinear(x: &[f64]) -> f64 {
        let d = x[0] - x[1];
        normal_cdf(1.5 * x[1] + 0.8 * x[0] - 0.4 * d * d - 0.3) - 0.07 * d * d
    }

    /// `τ(x) = κ τ_NL(x) + (1 - κ) τ_L(x)`.
    pub fn tau(&self, x: &[f64]) -> f64 {
        match self.constant_tau {
            Some(t) => t,
            None => self.kappa * Self::tau_nonlinear(x) + (1.0 - self.kappa) * Self::tau_linear(x),
        }
    }

    pub fn mu0(&self, x: &[f64]) -> f64 {
        self.m(x) - 0.5 * self.tau(x)
    }

    pub fn mu1(&self, x: &[f64]) -> f64 {
        self.m(x) + 0.5 * self.tau(x)
    }

    /// `∫ f(x₁, x₂) dx₁ dx₂ / 16` over `[-2, 2]²` by composite Simpson.
    fn average_over_square(f: impl Fn(&[f64]) -> f64) -> f64 {
        const N: usize = 1200;
        let h = 4.0 / N as f64;
        let simpson = |k: usize| match k {
            0 | N => 1.0,
            k if k % 2 == 1 => 4.0,
            _ => 2.0,
        };
        let mut total = 0.0;
        for i in 0..=N {
            let x1 = -2.0 + i as f64 * h;
            let mut inner = 0.0;
            for j in 0..=N {
                let x2 = -2.0 + j as f64 * h;
                inner += simpson(j) * f(&[x1, x2, 0.0, 0.0]);
            }
            total += simpson(i) * inner;
        }
        total * (h / 3.0) * (h / 3.0) / 16.0
    }

    /// `E(S) = E[ρ(X)]`.
    pub fn participation_rate(&self) -> f64 {
        Self::average_over_square(|x| self.rho(x))
    }

    /// `C_π = E[π(X)(1 - π(X)) | S = 1]`.
    pub fn overlap_constant(&self) -> f64 {
        let joint = Self::average_over_square(|x| {
            let p = self.pi(x);
            self.rho(x) * p * (1.0 - p)
        });
        joint / self.participation_rate()
    }

    /// Importance weight `w*(a, x)` given `E(S)`.
    pub fn importance_weight(&self, a: bool, x: &[f64], participation_rate: f64) -> f64 {
        let (p, r) = (self.pi(x), self.rho(x));
        let ipw = if a { 1.0 / p } else { 1.0 / (1.0 - p) };
        ipw * participation_rate * (1.0 - r) / ((1.0 - participation_rate) * r)
    }

    /// Overlap weight `w†(a, x)` given `C_π`.
    pub fn overlap_weight(&self, a: bool, x: &[f64], overlap_constant: f64) -> f64 {
        let p = self.pi(x);
        let ipw = if a { 1.0 / p } else { 1.0 / (1.0 - p) };
        p * (1.0 - p) / overlap_constant * ipw
    }
}

/// True quantities at one dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub pi: f64,
    pub rho: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub tau: f64,
}

pub fn oracle_rows(data: &Dataset, oracle: &OracleFunctions) -> Vec<OracleRow> {
    let x = data.x();
    (0..data.n())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            OracleRow {
                pi: oracle.pi(&row),
                rho: oracle.rho(&row),
                mu0: oracle.mu0(&row),
                mu1: oracle.mu1(&row),
                tau: oracle.tau(&row),
            }
        })
        .collect()
}

/// Draws a dataset. Covariates, population membership, treatment and noise
/// come from separate streams, so designs that share a seed share covariates.
pub fn generate(cfg: &ScenarioConfig) -> Result<(Dataset, OracleFunctions)> {
    cfg.validate()?;
    let oracle = cfg.oracle();
    let n = cfg.n;
    let mut rx = stream_rng(cfg.seed, STREAM_COVARIATES);
    let mut rs = stream_rng(cfg.seed, STREAM_POPULATION);
    let mut ra = stream_rng(cfg.seed, STREAM_TREATMENT);
    let mut re = stream_rng(cfg.seed, STREAM_NOISE);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let mut rows = vec![0.0; n * DIM];
    for v in rows.iter_mut() {
        *v = rx.gen_range(-2.0..2.0);
    }
    let mut s = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &rows[i * DIM..(i + 1) * DIM];
        let (us, ua): (f64, f64) = (rs.r#gen(), ra.r#gen());
        let eps = noise.sample(&mut re);
        let source = us < oracle.rho(xi);
        s.push(source);
        if source {
            let treated = ua < oracle.pi(xi);
            let signed = if treated { 0.5 } else { -0.5 };
            a.push(Some(treated));
            y.push(Some(oracle.m(xi) + signed * oracle.tau(xi) + eps));
        } else {
            a.push(None);
            y.push(None);
        }
    }
    let x = DMatrix::from_row_slice(n, DIM, &rows);
    let names = (1..=DIM).map(|j| format!("x{j}")).collect();
    Ok((Dataset::with_names(x, s, a, y, names)?, oracle))
}

/// Covariates drawn from the target population (`S = 0`), with the true
/// potential-outcome means at each point.
#[derive(Debug, Clone)]
pub struct TestSample {
    /// Row-major `m × 4`.
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl TestSample {
    /// Rejection sampling with acceptance probability `1 - ρ(x)`.
    pub fn draw(oracle: &OracleFunctions, m: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, STREAM_TEST);
        let mut x = Vec::with_capacity(m * DIM);
        let mut point = [0.0; DIM];
        while x.len() < m * DIM {
            for v in point.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let u: f64 = rng.r#gen();
            if u < 1.0 - oracle.rho(&point) {
                x.extend_from_slice(&point);
            }
        }
        Self::from_points(oracle, x)
    }

    pub fn from_points(oracle: &OracleFunctions, x: Vec<f64>) -> Self {
        let m = x.len() / DIM;
        let pt = |i: usize| &x[i * DIM..(i + 1) * DIM];
        let tau = (0..m).map(|i| oracle.tau(pt(i))).collect();
        let mu0 = (0..m).map(|i| oracle.mu0(pt(i))).collect();
        let mu1 = (0..m).map(|i| oracle.mu1(pt(i))).collect();
        Self { x, tau, mu0, mu1 }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * DIM..(i + 1) * DIM]
    }

    pub fn decisions(&self, rule: &LinearRule) -> Vec<bool> {
        (0..self.len()).map(|i| rule.decide(self.point(i))).collect()
    }
}

/// Search grid for `1{cos θ x₁ + sin θ x₂ + b ≥ 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleGrid {
    pub theta_steps: usize,
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    /// Resolution factor of the local refinement pass (1 disables it).
    pub refine: usize,
}

impl Default for RuleGrid {
    fn default() -> Self {
        Self {
            theta_steps: 720,
            b_min: -3.0,
            b_max: 3.0,
            b_step: 0.01,
            refine: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalRule {
    pub theta: f64,
    pub offset: f64,
    /// `Σ d(x) τ(x)` over the sample.
    pub total_effect: f64,
    pub rule: LinearRule,
}

/// Projections sorted ascending with suffix sums of τ, so that the treated
/// effect of any offset is one binary search.
struct Sweep {
    proj: Vec<f64>,
    suffix: Vec<f64>,
}

impl Sweep {
    fn new(sample: &TestSample, theta: f64, order: &mut Vec<usize>) -> Self {
        let (c, s) = (theta.cos(), theta.sin());
        let raw: Vec<f64> = (0..sample.len())
            .map(|i| {
                let p = sample.point(i);
                c * p[0] + s * p[1]
            })
            .collect();
        order.clear();
        order.extend(0..sample.len());
        order.sort_unstable_by(|&i, &j| raw[i].total_cmp(&raw[j]));
        let proj: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
        let mut suffix = vec![0.0; proj.len() + 1];
        for k in (0..proj.len()).rev() {
            suffix[k] = suffix[k + 1] + sample.tau[order[k]];
        }
        Self { proj, suffix }
    }

    /// `Σ τ` over points with `proj + b ≥ 0`.
    fn total(&self, b: f64) -> f64 {
        let k = self.proj.partition_point(|&p| p + b < 0.0);
        self.suffix[k]
    }
}

fn search(
    sample: &TestSample,
    thetas: impl Iterator<Item = f64>,
    offsets: &[f64],
    best: &mut (f64, f64, f64),
) {
    let mut order = Vec::new();
    for theta in thetas {
        let sweep = Sweep::new(sample, theta, &mut order);
        for &b in offsets {
            let v = sweep.total(b);
            if v > best.2 {
                *best = (theta, b, v);
            }
        }
    }
}

/// Maximises `Σ d(x) τ(x)` over the grid, then once more at `refine`-times
/// finer resolution around the incumbent.
pub fn optimal_linear_rule_on(sample: &TestSample, grid: &RuleGrid) -> OptimalRule {
    let dtheta = 2.0 * PI / grid.theta_steps as f64;
    let nb = ((grid.b_max - grid.b_min) / grid.b_step).round() as usize;
    let offsets: Vec<f64> = (0..=nb).map(|l| grid.b_min + l as f64 * grid.b_step).collect();
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    search(sample, (0..grid.theta_steps).map(|k| k as f64 * dtheta), &offsets, &mut best);
    if grid.refine > 1 {
        let r = grid.refine as i64;
        let (t0, b0) = (best.0, best.1);
        let fine_t = dtheta / grid.refine as f64;
        let fine_b = grid.b_step / grid.refine as f64;
        let offsets: Vec<f64> = (-r..=r).map(|l| b0 + l as f64 * fine_b).collect();
        search(sample, (-r..=r).map(|k| t0 + k as f64 * fine_t), &offsets, &mut best);
    }
    let (theta, offset, total_effect) = best;
    OptimalRule {
        theta,
        offset,
        total_effect,
        rule: LinearRule::from_angle(theta, offset, DIM),
    }
}

/// Optimal linear rule on a fresh target test sample of size `m_test`.
pub fn optimal_linear_rule(oracle: &OracleFunctions, m_test: usize, seed: u64) -> Result<OptimalRule> {
    if m_test < 10_000 {
        return Err(Error::InvalidArgument(format!("m_test = {m_test} is below 10^4")));
    }
    let sample = TestSample::draw(oracle, m_test, seed);
    Ok(optimal_linear_rule_on(&sample, &RuleGrid::default()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    /// `mean[d μ₁ + (1 - d) μ₀]`
    pub value: f64,
    pub regret: f64,
    /// Agreement with the reference rule.
    pub accuracy: f64,
    /// `mean[(2d - 1) τ]`
    pub value2: f64,
}

fn value_of(sample: &TestSample, d: &[bool]) -> f64 {
    let total: f64 = d
        .iter()
        .enumerate()
        .map(|(i, &t)| if t { sample.mu1[i] } else { sample.mu0[i] })
        .sum();
    total / sample.len() as f64
}

/// Scores `rule` against `reference` on a given sample.
pub fn evaluate_on_sample(rule: &LinearRule, reference: &LinearRule, sample: &TestSample) -> RuleEvaluation {
    let d = sample.decisions(rule);
    let d_ref = sample.decisions(reference);
    let m = sample.len() as f64;
    let value = value_of(sample, &d);
    let agree = d.iter().zip(&d_ref).filter(|(a, b)| a == b).count() as f64;
    let value2 = d
        .iter()
        .enumerate()
        .map(|(i, &t)| if t { sample.tau[i] } else { -sample.tau[i] })
        .sum::<f64>()
        / m;
    RuleEvaluation {
        value,
        regret: value_of(sample, &d_ref) - value,
        accuracy: agree / m,
        value2,
    }
}

/// Scores `rule` on a fresh target test sample.
pub fn evaluate_rule(
    rule: &LinearRule,
    oracle: &OracleFunctions,
    reference: &LinearRule,
    m_test: usize,
    seed: u64,
) -> RuleEvaluation {
    evaluate_on_sample(rule, reference, &TestSample::draw(oracle, m_test, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_6).abs() <= 1e-15);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() <= 1e-16);
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            let z: f64 = rng.gen_range(-8.0..8.0);
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() <= 1e-15);
        }
        assert_eq!(link(0.0), 0.5);
    }

    #[test]
    fn oracle_identities() {
        let o = OracleFunctions::new(Assignment::Nonlinear, 0.4);
        assert_eq!(OracleFunctions::tau_linear(&[0.0, 0.0, 1.0, -1.0]), 0.0);
        assert_eq!(OracleFunctions::new(Assignment::Linear, 0.0).tau(&[0.0, 0.0, 0.3, 0.3]), 0.0);
        let mut rng = stream_rng(2, 0);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert!((o.mu1(&x) - o.mu0(&x) - o.tau(&x)).abs() <= 1e-12);
            for a in Assignment::ALL {
                let p = OracleFunctions::new(a, 0.0).pi(&x);
                assert!(p > 0.1 && p < 0.9);
            }
            assert!(o.rho(&x) > 0.1 && o.rho(&x) < 0.9);
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for a in Assignment::ALL {
            assert_eq!(a.name().parse::<Assignment>().unwrap(), a);
        }
        assert!("quadratic".parse::<Assignment>().is_err());
    }

    #[test]
    fn participation_rate_matches_monte_carlo() {
        let cfg = ScenarioConfig::new(Assignment::Linear, 0.0, 1_000_000, 17).unwrap();
        let (data, oracle) = generate(&cfg).unwrap();
        let empirical = data.n_source() as f64 / data.n() as f64;
        // independent Monte Carlo estimate of E[G(x₂ - 1.2x₁)]
        let mut rng = stream_rng(99, 0);
        let m = 1_000_000;
        let mc: f64 = (0..m)
            .map(|_| {
                let x1: f64 = rng.gen_range(-2.0..2.0);
                let x2: f64 = rng.gen_range(-2.0..2.0);
                link(x2 - 1.2 * x1)
            })
            .sum::<f64>()
            / m as f64;
        let se = (2.0 * 0.25 / m as f64).sqrt();
        assert!((empirical - mc).abs() <= 3.0 * se, "{empirical} vs {mc}");
        assert!((oracle.participation_rate() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn generation_is_deterministic_and_streams_are_separate() {
        let a = ScenarioConfig::new(Assignment::Linear, 0.0, 200, 5).unwrap();
        let b = ScenarioConfig::new(Assignment::Nonlinear, 0.4, 200, 5).unwrap();
        let (da, _) = generate(&a).unwrap();
        let (da2, _) = generate(&a).unwrap();
        let (db, _) = generate(&b).unwrap();
        assert_eq!(da, da2);
        assert_eq!(da.x(), db.x());
        assert_eq!(da.s(), db.s());
        for i in 0..da.n() {
            assert_eq!(da.treatment(i).is_some(), da.s()[i]);
        }
    }

    #[test]
    fn treated_fraction_tracks_propensity() {
        let cfg = ScenarioConfig::new(Assignment::LinearBadOverlap, 0.0, 100_000, 3).unwrap();
        let (data, oracle) = generate(&cfg).unwrap();
        let rows = oracle_rows(&data, &oracle);
        let src = data.source_rows();
        let treated = src.iter().filter(|&&r| data.treatment(r) == Some(true)).count() as f64;
        let expected: f64 = src.iter().map(|&r| rows[r].pi).sum();
        let sd = src.iter().map(|&r| rows[r].pi * (1.0 - rows[r].pi)).sum::<f64>().sqrt();
        assert!((treated - expected).abs() < 4.0 * sd);
    }

    #[test]
    fn test_sample_follows_target_distribution() {
        let o = OracleFunctions::new(Assignment::Linear, 0.0);
        let sample = TestSample::draw(&o, 50_000, 1);
        assert_eq!(sample.len(), 50_000);
        // target favours large x₁ - x₂ (small ρ)
        let mean_rho: f64 = (0..sample.len()).map(|i| o.rho(sample.point(i))).sum::<f64>() / 50_000.0;
        assert!(mean_rho < 0.45, "{mean_rho}");
    }

    #[test]
    fn constant_effect_treats_everyone() {
        let o = OracleFunctions::new(Assignment::Linear, 0.0).with_constant_tau(1.0);
        let sample = TestSample::draw(&o, 10_000, 2);
        let best = optimal_linear_rule_on(&sample, &RuleGrid::default());
        assert_eq!(best.total_effect, 10_000.0);
        assert!(sample.decisions(&best.rule).iter().all(|&d| d));
    }

    #[test]
    fn linear_effect_recovers_analytic_boundary() {
        let o = OracleFunctions::new(Assignment::Linear, 0.0);
        let best = optimal_linear_rule(&o, 100_000, 11).unwrap();
        let target = 0.4f64.atan2(0.6);
        let mut diff = (best.theta - target).rem_euclid(2.0 * PI);
        if diff > PI {
            diff = 2.0 * PI - diff;
        }
        assert!(best.offset.abs() <= 0.02, "{}", best.offset);
        assert!(diff.to_degrees() <= 1.0, "{}", diff.to_degrees());
    }

    #[test]
    fn nonlinear_effect_matches_finer_grid() {
        let o = OracleFunctions::new(Assignment::Linear, 0.4);
        let m = 20_000;
        let sample = TestSample::draw(&o, m, 4);
        let best = optimal_linear_rule_on(&sample, &RuleGrid::default());
        let fine = optimal_linear_rule_on(
            &sample,
            &RuleGrid {
                theta_steps: 2880,
                b_step: 0.0025,
                refine: 1,
                ..RuleGrid::default()
            },
        );
        assert!(fine.total_effect - best.total_effect <= 1e-3 * m as f64);
        // the incumbent's total is what its rule achieves
        let direct: f64 = (0..m)
            .filter(|&i| best.rule.decide(sample.point(i)))
            .map(|i| sample.tau[i])
            .sum();
        assert!((direct - best.total_effect).abs() < 1e-6);
    }

    #[test]
    fn evaluation_identities() {
        let o = OracleFunctions::new(Assignment::Linear, 0.4);
        let sample = TestSample::draw(&o, 10_000, 6);
        let reference = LinearRule::from_angle(0.7, 0.1, DIM);
        let same = evaluate_on_sample(&reference, &reference, &sample);
        assert_eq!(same.regret, 0.0);
        assert_eq!(same.accuracy, 1.0);
        let all = evaluate_on_sample(&LinearRule::treat_all(DIM), &reference, &sample);
        let mean_mu1 = sample.mu1.iter().sum::<f64>() / 10_000.0;
        let ate = sample.tau.iter().sum::<f64>() / 10_000.0;
        assert!((all.value - mean_mu1).abs() < 1e-12);
        assert!((all.value2 - ate).abs() < 1e-12);
        let rule = LinearRule::new(-0.2, vec![0.3, -1.0, 0.5, 0.1]);
        let ev = evaluate_on_sample(&rule, &reference, &sample);
        let mut oracle_value = 0.0;
        for i in 0..sample.len() {
            let x = sample.point(i);
            let d = -0.2 + 0.3 * x[0] - x[1] + 0.5 * x[2] + 0.1 * x[3] >= 0.0;
            oracle_value += if d { o.mu1(x) } else { o.mu0(x) };
        }
        assert!((ev.value - oracle_value / 10_000.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_rule_has_nonnegative_regret_on_its_sample() {
        let o = OracleFunctions::new(Assignment::Linear, 0.4);
        let sample = TestSample::draw(&o, 20_000, 8);
        let best = optimal_linear_rule_on(&sample, &RuleGrid::default());
        let mut rng = stream_rng(3, 0);
        for _ in 0..50 {
            let rule = LinearRule::from_angle(rng.gen_range(0.0..2.0 * PI), rng.gen_range(-3.0..3.0), DIM);
            assert!(evaluate_on_sample(&rule, &best.rule, &sample).regret >= -1e-12);
        }
    }
}
