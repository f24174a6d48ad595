use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};
use itr_core::experiment::{self, ExperimentConfig, Method};
use itr_core::kernel::KernelSpec;
use itr_core::mmd::GramCache;
use itr_core::simulation::{self, Assignment, ScenarioConfig};
use itr_core::tuning::{self, KernelRidgeOutcomes, TuningConfig};
use itr_core::{Dataset, LinearRule, Schema, WeightSolution, itr};

#[derive(Parser)]
#[command(name = "itr", version, about = "Treatment rules for a target population with kernel balancing weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it with an oracle sidecar file.
    Simulate(SimulateArgs),
    /// Compute weights for the source rows of a dataset.
    Weights(WeightsArgs),
    /// Learn a linear rule and apply it to the target rows.
    Learn(LearnArgs),
    /// Select (alpha, lambda) for balancing weights.
    Tune(TuneArgs),
    /// Run a replicated simulation benchmark.
    Experiment(ExperimentArgs),
    /// Aggregate an existing results file.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_assignment)]
    scenario: Assignment,
    #[arg(long)]
    kappa: f64,
    #[arg(long, default_value_t = simulation::DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Delimited file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "s")]
    col_s: String,
    #[arg(long, default_value = "a")]
    col_a: String,
    #[arg(long, default_value = "y")]
    col_y: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl DataArgs {
    fn schema(&self) -> Result<Schema> {
        if !self.delimiter.is_ascii() {
            bail!("delimiter must be a single ASCII character");
        }
        Ok(Schema {
            s: self.col_s.clone(),
            a: self.col_a.clone(),
            y: self.col_y.clone(),
            delimiter: self.delimiter as u8,
        })
    }

    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.data, &self.schema()?).with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// balance, ipw, importance, overlap, ebal_s or ebal_t. With --alpha and
    /// --lambda, `balance` uses the given pair instead of tuning.
    #[arg(long, default_value = "balance")]
    method: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// TOML file with tuning settings.
    #[arg(long)]
    tuning: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl MethodArgs {
    fn method(&self) -> Result<Method> {
        let base: Method = self.method.parse()?;
        match (base, self.alpha, self.lambda) {
            (Method::Balance, Some(a), Some(l)) => Ok(format!("balance_fixed({a},{l})").parse()?),
            (_, None, None) => Ok(base),
            (Method::Balance, _, _) => bail!("--alpha and --lambda must be given together"),
            _ => bail!("--alpha/--lambda only apply to `balance`"),
        }
    }

    fn tuning(&self) -> Result<TuningConfig> {
        let mut cfg = match &self.tuning {
            Some(path) => toml::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?,
            None => TuningConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct WeightsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Weights CSV (row, group, weight).
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines file receiving one diagnostics record.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Use weights from a file written by `weights` instead of fitting them.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Rule as JSON.
    #[arg(long)]
    rule_out: PathBuf,
    /// Target decisions CSV (row, treat).
    #[arg(long)]
    decisions_out: Option<PathBuf>,
    #[arg(long, default_value_t = itr::RULE_RIDGE)]
    ridge: f64,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    tuning: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-alpha CSV.
    #[arg(long)]
    out: PathBuf,
    /// JSON with the selected pair and rule.
    #[arg(long)]
    selected_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    m_test: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (otherwise ITR_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// results.csv written by `experiment`.
    #[arg(long)]
    results: PathBuf,
    /// Output directory; defaults to the directory of the results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> std::result::Result<Assignment, String> {
    s.parse().map_err(|e: itr_core::Error| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = ScenarioConfig::new(args.scenario, args.kappa, args.n, args.seed)?;
    let (data, oracle) = simulation::generate(&cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    data.write(&args.out, &Schema::default())?;
    let sidecar = oracle_path(&args.out);
    let mut w = create(&sidecar)?;
    writeln!(w, "row,pi,rho,mu0,mu1,tau")?;
    for (i, r) in simulation::oracle_rows(&data, &oracle).iter().enumerate() {
        writeln!(w, "{i},{},{},{},{},{}", r.pi, r.rho, r.mu0, r.mu1, r.tau)?;
    }
    w.flush()?;
    eprintln!(
        "wrote {} rows ({} source, {} target) to {} and {}",
        data.n(),
        data.n_source(),
        data.n_target(),
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}

fn oracle_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.oracle.csv"))
}

struct Fitted {
    weights: WeightSolution,
    rule: LinearRule,
    alpha: Option<f64>,
    lambda: Option<f64>,
}

fn fit(data: &Dataset, m: &MethodArgs) -> Result<Fitted> {
    let method = m.method()?;
    if method.needs_oracle() {
        bail!("`{method}` needs the true design and is only available in `experiment`");
    }
    if method == Method::TreatAll {
        bail!("`treat_all` produces no weights");
    }
    let cache = if method.needs_kernel() {
        Some(GramCache::new(data, &KernelSpec::median_heuristic(data.x())?))
    } else {
        None
    };
    let tuning = m.tuning()?;
    let cfg = ExperimentConfig {
        tuning: tuning.clone(),
        ..ExperimentConfig::default()
    };
    let fit = experiment::fit_method(&method, data, None, cache.as_ref(), &cfg, tuning.seed)?;
    Ok(Fitted {
        weights: fit.weights.context("method produced no weights")?,
        rule: fit.rule,
        alpha: fit.alpha,
        lambda: fit.lambda,
    })
}

fn write_weights(path: &Path, data: &Dataset, w: &WeightSolution) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "row,group,weight")?;
    for (&row, &v) in w.rows.iter().zip(&w.w) {
        let group = if data.treatment(row) == Some(true) { "treated" } else { "control" };
        writeln!(out, "{row},{group},{v}")?;
    }
    out.flush()?;
    Ok(())
}

fn read_weights(path: &Path, data: &Dataset) -> Result<WeightSolution> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_row = vec![None; data.n()];
    for (k, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("{}: line {} should have 3 fields", path.display(), k + 1);
        }
        let row: usize = fields[0].trim().parse()?;
        let w: f64 = fields[2].trim().parse()?;
        if row >= data.n() {
            bail!("{}: row {row} out of range", path.display());
        }
        by_row[row] = Some(w);
    }
    let raw = data
        .source_rows()
        .iter()
        .map(|&r| by_row[r].with_context(|| format!("no weight for source row {r}")))
        .collect::<Result<Vec<f64>>>()?;
    Ok(WeightSolution::normalized(data, &raw)?)
}

fn weights(args: WeightsArgs) -> Result<()> {
    let data = args.data.load()?;
    let f = fit(&data, &args.method)?;
    write_weights(&args.out, &data, &f.weights)?;
    let record = serde_json::json!({
        "method": args.method.method()?.to_string(),
        "alpha": f.alpha,
        "lambda": f.lambda,
        "ess": f.weights.ess,
        "objective": f.weights.objective,
        "mmd": f.weights.mmd,
        "n_source": data.n_source(),
        "n_target": data.n_target(),
    });
    match &args.diagnostics {
        Some(path) => {
            let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{record}")?;
        }
        None => eprintln!("{record}"),
    }
    Ok(())
}

fn learn(args: LearnArgs) -> Result<()> {
    let data = args.data.load()?;
    let rule = match &args.weights {
        Some(path) => itr::learn_linear_rule(&read_weights(path, &data)?, &data, args.ridge)?,
        None => {
            let f = fit(&data, &args.method)?;
            if args.ridge == itr::RULE_RIDGE {
                f.rule
            } else {
                itr::learn_linear_rule(&f.weights, &data, args.ridge)?
            }
        }
    };
    serde_json::to_writer_pretty(create(&args.rule_out)?, &rule)?;
    if let Some(path) = &args.decisions_out {
        let mut out = create(path)?;
        writeln!(out, "row,treat")?;
        let x = data.x();
        for r in data.target_rows() {
            let point: Vec<f64> = x.row(r).iter().copied().collect();
            writeln!(out, "{r},{}", u8::from(rule.decide(&point)))?;
        }
        out.flush()?;
    }
    Ok(())
}

fn tune(args: TuneArgs) -> Result<()> {
    let data = args.data.load()?;
    let margs = MethodArgs {
        method: "balance".into(),
        alpha: None,
        lambda: None,
        tuning: args.tuning.clone(),
        seed: args.seed,
    };
    let cfg = margs.tuning()?;
    let cache = GramCache::new(&data, &KernelSpec::median_heuristic(data.x())?);
    let outcome = KernelRidgeOutcomes {
        spec: cache.spec(),
        ridge_grid: &cfg.outcome_ridge_grid,
        folds: cfg.cv_folds,
    };
    let res = tuning::select_alpha_with(&data, &cache, &cfg, &outcome, &Default::default())?;
    let mut out = create(&args.out)?;
    writeln!(out, "alpha,lambda,value,ess,error")?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &res.report {
        let err = r.error.as_deref().unwrap_or("").replace(['"', ','], ";");
        writeln!(out, "{},{},{},{},{err}", r.alpha, cell(r.lambda), cell(r.value), cell(r.ess))?;
    }
    out.flush()?;
    let selected = serde_json::json!({
        "alpha": res.alpha,
        "lambda": res.lambda,
        "ess": res.weights.ess,
        "rule": res.rule,
    });
    match &args.selected_out {
        Some(path) => serde_json::to_writer_pretty(create(path)?, &selected)?,
        None => println!("{selected}"),
    }
    Ok(())
}

fn run_experiment(args: ExperimentArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(s) = args.master_seed {
        cfg.master_seed = s;
    }
    if let Some(m) = args.m_test {
        cfg.m_test = m;
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods.iter().map(|m| m.parse()).collect::<itr_core::Result<_>>()?;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(n) = args.workers {
        // SAFETY: single-threaded at this point; read by run_experiment
        unsafe { std::env::set_var(experiment::WORKERS_ENV, n.to_string()) };
    }
    cfg.validate()?;
    eprintln!(
        "running {} cells x {} replications x {} methods",
        cfg.scenarios.len(),
        cfg.replications,
        cfg.methods.len()
    );
    let out = experiment::run_experiment(&cfg)?;
    experiment::write_results(&out, &cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), toml::to_string(&cfg)?)?;
    for w in experiment::emit_report(&out.rows, &cfg.output_dir)? {
        eprintln!("warning: {w}");
    }
    print!("{}", fs::read_to_string(cfg.output_dir.join("summary.txt"))?);
    let failed = out.n_failed();
    if failed > 0 {
        eprintln!("{failed} of {} fits failed; see the error column", out.rows.len());
    }
    Ok(failed == 0)
}

fn report(args: ReportArgs) -> Result<()> {
    let rows = experiment::read_results(&args.results)?;
    let dir = args.out.unwrap_or_else(|| {
        args.results
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    for w in experiment::emit_report(&rows, &dir)? {
        eprintln!("warning: {w}");
    }
    print!("{}", fs::read_to_string(dir.join("summary.txt"))?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Weights(a) => weights(a).map(|_| true),
        Command::Learn(a) => learn(a).map(|_| true),
        Command::Tune(a) => tune(a).map(|_| true),
        Command::Experiment(a) => run_experiment(a),
        Command::Report(a) => report(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
