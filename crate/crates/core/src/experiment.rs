//! Replicated simulation benchmark: generate, weight, learn, evaluate, aggregate.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparators::{self, ClassicalKind, EbalTarget, MomentBasis};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::itr::{self, LinearRule};
use crate::kernel::KernelSpec;
use crate::mmd::GramCache;
use crate::qp::QpSettings;
use crate::rng::{derive_seed, mix};
use crate::simulation::{
    self, Assignment, OptimalRule, OracleFunctions, RuleGrid, ScenarioConfig, TestSample, oracle_rows,
};
use crate::tuning::{self, KernelRidgeOutcomes, TuningConfig};
use crate::weights::{BalanceHyperparams, BalanceSolver, WeightSolution};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "ITR_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Balancing weights with tuned `(α, λ)`.
    Balance,
    BalanceFixed { alpha: f64, lambda: f64 },
    Ipw,
    Importance,
    Overlap,
    EbalS,
    EbalT,
    OracleImportance,
    OracleOverlap,
    TreatAll,
}

impl Method {
    pub const NAMES: [&'static str; 10] = [
        "balance",
        "balance_fixed(ALPHA,LAMBDA)",
        "ipw",
        "importance",
        "overlap",
        "ebal_s",
        "ebal_t",
        "oracle_importance",
        "oracle_overlap",
        "treat_all",
    ];

    pub fn needs_kernel(&self) -> bool {
        matches!(self, Self::Balance | Self::BalanceFixed { .. })
    }

    pub fn needs_oracle(&self) -> bool {
        matches!(self, Self::OracleImportance | Self::OracleOverlap)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Balance => f.write_str("balance"),
            Self::BalanceFixed { alpha, lambda } => write!(f, "balance_fixed({alpha},{lambda})"),
            Self::Ipw => f.write_str("ipw"),
            Self::Importance => f.write_str("importance"),
            Self::Overlap => f.write_str("overlap"),
            Self::EbalS => f.write_str("ebal_s"),
            Self::EbalT => f.write_str("ebal_t"),
            Self::OracleImportance => f.write_str("oracle_importance"),
            Self::OracleOverlap => f.write_str("oracle_overlap"),
            Self::TreatAll => f.write_str("treat_all"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "balance" => Self::Balance,
            "ipw" => Self::Ipw,
            "importance" => Self::Importance,
            "overlap" => Self::Overlap,
            "ebal_s" => Self::EbalS,
            "ebal_t" => Self::EbalT,
            "oracle_importance" => Self::OracleImportance,
            "oracle_overlap" => Self::OracleOverlap,
            "treat_all" => Self::TreatAll,
            _ => {
                let args = s
                    .strip_prefix("balance_fixed(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| {
                        Error::Config(format!("unknown method `{s}`; known: {}", Method::NAMES.join(", ")))
                    })?;
                let parts: Vec<&str> = args.split(',').map(str::trim).collect();
                let parse = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{v}` in `{s}`")));
                if parts.len() != 2 {
                    return Err(Error::Config(format!("`{s}` needs two arguments")));
                }
                let h = BalanceHyperparams::new(parse(parts[0])?, parse(parts[1])?)?;
                Self::BalanceFixed {
                    alpha: h.alpha,
                    lambda: h.lambda,
                }
            }
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Balance,
        Method::Ipw,
        Method::Importance,
        Method::Overlap,
        Method::EbalS,
        Method::EbalT,
        Method::OracleImportance,
        Method::OracleOverlap,
    ]
}

fn default_scenarios() -> Vec<ScenarioConfig> {
    let mut cells = Vec::new();
    for kappa in [0.0, 0.4] {
        for assignment in Assignment::ALL {
            cells.push(ScenarioConfig {
                assignment,
                kappa,
                n: simulation::DEFAULT_N,
                seed: 0,
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario cells. Each replication reuses the same covariate draw across
    /// cells; a cell's `seed` is added to the replication seed.
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub master_seed: u64,
    pub m_test: usize,
    pub tuning: TuningConfig,
    pub output_dir: PathBuf,
    pub ebal_basis: MomentBasis,
    pub qp: QpSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            methods: default_methods(),
            replications: 50,
            master_seed: 1,
            m_test: 100_000,
            tuning: TuningConfig::default(),
            output_dir: PathBuf::from("results"),
            ebal_basis: MomentBasis::First,
            qp: QpSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios given".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        if self.m_test < 10_000 {
            return Err(Error::Config(format!("m_test = {} is below 10^4", self.m_test)));
        }
        self.tuning.validate()
    }
}

/// One row of the results table. Missing values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub kappa: f64,
    pub method: String,
    pub replication: usize,
    pub regret: Option<f64>,
    pub accuracy: Option<f64>,
    pub value: Option<f64>,
    pub value2: Option<f64>,
    pub ess: Option<f64>,
    pub alpha_selected: Option<f64>,
    pub lambda_selected: Option<f64>,
    pub status: String,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: String,
    pub kappa: f64,
    pub method: String,
    pub replication: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
}

impl ExperimentOutput {
    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

/// Everything a method produces for one replication.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub rule: LinearRule,
    pub weights: Option<WeightSolution>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

/// Fits one method on one dataset. Oracle methods need the true design;
/// balancing methods need a kernel cache.
pub fn fit_method(
    method: &Method,
    data: &Dataset,
    oracle: Option<&OracleFunctions>,
    cache: Option<&GramCache>,
    cfg: &ExperimentConfig,
    tuning_seed: u64,
) -> Result<MethodFit> {
    let ridge = cfg.tuning.rule_ridge;
    let with_weights = |w: WeightSolution, alpha: Option<f64>, lambda: Option<f64>| -> Result<MethodFit> {
        w.check_invariants(data)?;
        Ok(MethodFit {
            rule: itr::learn_linear_rule(&w, data, ridge)?,
            weights: Some(w),
            alpha,
            lambda,
        })
    };
    let oracle_probs = || -> Result<(Vec<f64>, Vec<f64>)> {
        let oracle =
            oracle.ok_or_else(|| Error::InvalidArgument(format!("method `{method}` needs the true design")))?;
        let rows = oracle_rows(data, oracle);
        Ok((rows.iter().map(|r| r.pi).collect(), rows.iter().map(|r| r.rho).collect()))
    };
    let need_cache = || {
        cache.ok_or_else(|| Error::InvalidArgument(format!("method `{method}` needs a kernel cache")))
    };
    match method {
        Method::Balance => {
            let cache = need_cache()?;
            let tcfg = TuningConfig {
                seed: tuning_seed,
                ..cfg.tuning.clone()
            };
            let outcome = KernelRidgeOutcomes {
                spec: cache.spec(),
                ridge_grid: &tcfg.outcome_ridge_grid,
                folds: tcfg.cv_folds,
            };
            let res = tuning::select_alpha_with(data, cache, &tcfg, &outcome, &cfg.qp)?;
            res.weights.check_invariants(data)?;
            Ok(MethodFit {
                rule: res.rule,
                weights: Some(res.weights),
                alpha: Some(res.alpha),
                lambda: Some(res.lambda),
            })
        }
        Method::BalanceFixed { alpha, lambda } => {
            let cache = need_cache()?;
            let mut solver = BalanceSolver::with_cache(data, cache.clone());
            solver.settings = cfg.qp.clone();
            let fit = solver.solve(&BalanceHyperparams::new(*alpha, *lambda)?, None)?;
            with_weights(fit.solution, Some(*alpha), Some(*lambda))
        }
        Method::Ipw => with_weights(comparators::estimated_weights(data, ClassicalKind::Ipw)?.solution, None, None),
        Method::Importance => with_weights(
            comparators::estimated_weights(data, ClassicalKind::Importance)?.solution,
            None,
            None,
        ),
        Method::Overlap => with_weights(
            comparators::estimated_weights(data, ClassicalKind::Overlap)?.solution,
            None,
            None,
        ),
        Method::EbalS => with_weights(
            comparators::entropy_balancing(data, EbalTarget::SourceMoments, cfg.ebal_basis)?,
            None,
            None,
        ),
        Method::EbalT => with_weights(
            comparators::entropy_balancing(data, EbalTarget::TargetMoments, cfg.ebal_basis)?,
            None,
            None,
        ),
        Method::OracleImportance => {
            let (pi, rho) = oracle_probs()?;
            let w = comparators::classical_weights(data, ClassicalKind::Importance, &pi, Some(&rho))?;
            with_weights(w.solution, None, None)
        }
        Method::OracleOverlap => {
            let (pi, _) = oracle_probs()?;
            let w = comparators::classical_weights(data, ClassicalKind::Overlap, &pi, None)?;
            with_weights(w.solution, None, None)
        }
        Method::TreatAll => Ok(MethodFit {
            rule: LinearRule::treat_all(data.p()),
            weights: None,
            alpha: None,
            lambda: None,
        }),
    }
}

/// Seed of the data for one replication (shared by every scenario cell).
pub fn replication_seed(master: u64, replication: usize) -> u64 {
    derive_seed(master, replication as u64)
}

fn test_sample_seed(master: u64) -> u64 {
    mix(master ^ 0x7E57_5A3F_1E00_0000)
}

/// Shared evaluation sample and optimal rule for one `κ`.
pub struct Reference {
    pub kappa: f64,
    pub sample: TestSample,
    pub optimal: OptimalRule,
}

/// Draws the target test sample once per master seed and finds the optimal
/// linear rule for every `κ` in the configuration.
pub fn references(cfg: &ExperimentConfig) -> Vec<Reference> {
    let mut kappas: Vec<f64> = Vec::new();
    for s in &cfg.scenarios {
        if !kappas.iter().any(|k| k.to_bits() == s.kappa.to_bits()) {
            kappas.push(s.kappa);
        }
    }
    // the target covariate law does not depend on the design, so the points are shared
    let base = TestSample::draw(&OracleFunctions::new(Assignment::Linear, 0.0), cfg.m_test, test_sample_seed(cfg.master_seed));
    kappas
        .par_iter()
        .map(|&kappa| {
            let sample = TestSample::from_points(&OracleFunctions::new(Assignment::Linear, kappa), base.x.clone());
            let optimal = simulation::optimal_linear_rule_on(&sample, &RuleGrid::default());
            Reference { kappa, sample, optimal }
        })
        .collect()
}

fn run_replication(
    cell: &ScenarioConfig,
    replication: usize,
    cfg: &ExperimentConfig,
    reference: &Reference,
) -> Vec<(ResultRow, TimingRow)> {
    let seed = replication_seed(cfg.master_seed, replication).wrapping_add(cell.seed);
    let scenario = cell.assignment.to_string();
    let base_row = |method: &Method| ResultRow {
        scenario: scenario.clone(),
        kappa: cell.kappa,
        method: method.to_string(),
        replication,
        regret: None,
        accuracy: None,
        value: None,
        value2: None,
        ess: None,
        alpha_selected: None,
        lambda_selected: None,
        status: "failed".into(),
        error: None,
    };
    let timing = |method: &Method, ms: f64| TimingRow {
        scenario: scenario.clone(),
        kappa: cell.kappa,
        method: method.to_string(),
        replication,
        wall_time_ms: ms,
    };
    let setup_start = Instant::now();
    let data_cfg = ScenarioConfig { seed, ..*cell };
    let setup = simulation::generate(&data_cfg).and_then(|(data, oracle)| {
        let cache = if cfg.methods.iter().any(Method::needs_kernel) {
            Some(GramCache::new(&data, &KernelSpec::median_heuristic(data.x())?))
        } else {
            None
        };
        Ok((data, oracle, cache))
    });
    let setup_ms = setup_start.elapsed().as_secs_f64() * 1e3;
    let (data, oracle, cache) = match setup {
        Ok(v) => v,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|m| {
                    let mut row = base_row(m);
                    row.error = Some(format!("data generation: {e}"));
                    (row, timing(m, setup_ms))
                })
                .collect();
        }
    };
    cfg.methods
        .iter()
        .map(|method| {
            let start = Instant::now();
            let mut row = base_row(method);
            match fit_method(method, &data, Some(&oracle), cache.as_ref(), cfg, derive_seed(seed, 0x7)) {
                Ok(fit) => {
                    let ev = simulation::evaluate_on_sample(&fit.rule, &reference.optimal.rule, &reference.sample);
                    row.regret = Some(ev.regret);
                    row.accuracy = Some(ev.accuracy);
                    row.value = Some(ev.value);
                    row.value2 = Some(ev.value2);
                    row.ess = fit.weights.as_ref().map(|w| w.ess);
                    row.alpha_selected = fit.alpha;
                    row.lambda_selected = fit.lambda;
                    row.status = "ok".into();
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            let ms = start.elapsed().as_secs_f64() * 1e3;
            (row, timing(method, ms))
        })
        .collect()
}

/// Worker count from the environment, if set.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Runs every (scenario, replication, method) triple. Rows come back in
/// configuration order regardless of scheduling; failures are recorded as
/// rows with status `failed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let run = || {
        let refs = references(cfg);
        let tasks: Vec<(usize, usize)> = (0..cfg.scenarios.len())
            .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
            .collect();
        let chunks: Vec<Vec<(ResultRow, TimingRow)>> = tasks
            .par_iter()
            .map(|&(c, r)| {
                let cell = &cfg.scenarios[c];
                let reference = refs
                    .iter()
                    .find(|x| x.kappa.to_bits() == cell.kappa.to_bits())
                    .expect("reference for every κ");
                run_replication(cell, r, cfg, reference)
            })
            .collect();
        let mut out = ExperimentOutput::default();
        for (row, t) in chunks.into_iter().flatten() {
            out.rows.push(row);
            out.timings.push(t);
        }
        out
    };
    match workers_from_env() {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 13] = [
    "scenario",
    "kappa",
    "method",
    "replication",
    "regret",
    "accuracy",
    "value",
    "value2",
    "ess",
    "alpha_selected",
    "lambda_selected",
    "status",
    "error",
];

/// Writes `results.csv` and `timings.csv` (wall times are kept apart so the
/// results file is reproducible byte for byte).
pub fn write_results(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &out.rows, &RESULT_COLUMNS)?;
    write_csv(
        &dir.join("timings.csv"),
        &out.timings,
        &["scenario", "kappa", "method", "replication", "wall_time_ms"],
    )
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<ResultRow>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

/// Type-7 (linear interpolation) sample quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub kappa: f64,
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub regret_median: Option<f64>,
    pub regret_q1: Option<f64>,
    pub regret_q3: Option<f64>,
    pub accuracy_median: Option<f64>,
    pub accuracy_q1: Option<f64>,
    pub accuracy_q3: Option<f64>,
    pub value2_median: Option<f64>,
    pub ess_median: Option<f64>,
    pub alpha_median: Option<f64>,
}

pub const AGGREGATE_COLUMNS: [&str; 14] = [
    "scenario",
    "kappa",
    "method",
    "n_ok",
    "n_failed",
    "regret_median",
    "regret_q1",
    "regret_q3",
    "accuracy_median",
    "accuracy_q1",
    "accuracy_q3",
    "value2_median",
    "ess_median",
    "alpha_median",
];

fn summary_of(rows: &[&ResultRow], field: impl Fn(&ResultRow) -> Option<f64>) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = rows.iter().filter(|r| r.ok()).filter_map(|r| field(r)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some((quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75)))
}

/// Per (scenario, κ, method) medians and quartiles over successful rows, in
/// first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, f64, String)> = Vec::new();
    for r in rows {
        let key = (r.scenario.clone(), r.kappa, r.method.clone());
        if !keys.iter().any(|k| k.0 == key.0 && k.1.to_bits() == key.1.to_bits() && k.2 == key.2) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scenario, kappa, method)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.kappa.to_bits() == kappa.to_bits() && r.method == method)
                .collect();
            let regret = summary_of(&cell, |r| r.regret);
            let accuracy = summary_of(&cell, |r| r.accuracy);
            AggregateRow {
                n_ok: cell.iter().filter(|r| r.ok()).count(),
                n_failed: cell.iter().filter(|r| !r.ok()).count(),
                regret_median: regret.map(|s| s.0),
                regret_q1: regret.map(|s| s.1),
                regret_q3: regret.map(|s| s.2),
                accuracy_median: accuracy.map(|s| s.0),
                accuracy_q1: accuracy.map(|s| s.1),
                accuracy_q3: accuracy.map(|s| s.2),
                value2_median: summary_of(&cell, |r| r.value2).map(|s| s.0),
                ess_median: summary_of(&cell, |r| r.ess).map(|s| s.0),
                alpha_median: summary_of(&cell, |r| r.alpha_selected).map(|s| s.0),
                scenario,
                kappa,
                method,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn summary_text(agg: &[AggregateRow]) -> String {
    let mut s = String::new();
    if agg.is_empty() {
        s.push_str("no results\n");
        return s;
    }
    let mut current: Option<(String, u64)> = None;
    for a in agg {
        let key = (a.scenario.clone(), a.kappa.to_bits());
        if current.as_ref() != Some(&key) {
            s.push_str(&format!("\nscenario {} kappa {}\n", a.scenario, a.kappa));
            s.push_str(&format!(
                "  {:<28} {:>5} {:>6} {:>10} {:>21} {:>9} {:>8}\n",
                "method", "ok", "failed", "regret", "regret IQR", "accuracy", "alpha"
            ));
            current = Some(key);
        }
        let iqr = match (a.regret_q1, a.regret_q3) {
            (Some(q1), Some(q3)) => format!("[{q1:.5}, {q3:.5}]"),
            _ => "-".into(),
        };
        s.push_str(&format!(
            "  {:<28} {:>5} {:>6} {:>10} {:>21} {:>9} {:>8}\n",
            a.method,
            a.n_ok,
            a.n_failed,
            fmt_opt(a.regret_median, 5),
            iqr,
            fmt_opt(a.accuracy_median, 4),
            fmt_opt(a.alpha_median, 2),
        ));
    }
    s
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Boxplots of regret and accuracy per scenario cell, read from results.csv."""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

here = Path(__file__).resolve().parent
df = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else here / "results.csv")
df = df[df["status"] == "ok"]
cells = df[["scenario", "kappa"]].drop_duplicates().values.tolist()
methods = list(dict.fromkeys(df["method"]))
fig, axes = plt.subplots(2, max(len(cells), 1), figsize=(4 * max(len(cells), 1), 7), squeeze=False)
for j, (scenario, kappa) in enumerate(cells):
    cell = df[(df["scenario"] == scenario) & (df["kappa"] == kappa)]
    for i, metric in enumerate(["regret", "accuracy"]):
        ax = axes[i][j]
        data = [cell.loc[cell["method"] == m, metric].dropna() for m in methods]
        ax.boxplot(data, showfliers=False)
        ax.set_xticks(range(1, len(methods) + 1))
        ax.set_xticklabels(methods, rotation=60, ha="right", fontsize=7)
        ax.set_title(f"{scenario}, kappa={kappa}", fontsize=9)
        ax.set_ylabel(metric)
fig.tight_layout()
fig.savefig(here / "results.png", dpi=150)
"#;

/// Writes `aggregate.csv`, `summary.txt` and `plot_results.py`. Returns
/// warnings (currently only for empty input).
pub fn emit_report(rows: &[ResultRow], dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let agg = aggregate(rows);
    write_csv(&dir.join("aggregate.csv"), &agg, &AGGREGATE_COLUMNS)?;
    fs::write(dir.join("summary.txt"), summary_text(&agg))?;
    fs::write(dir.join("plot_results.py"), PLOT_SCRIPT)?;
    let mut warnings = Vec::new();
    if rows.is_empty() {
        warnings.push("results are empty; wrote header-only aggregate".to_string());
    }
    Ok(warnings)
}
