//! Command-line front end.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use crate::ambiguity::{box_grid, worst_case, AmbiguitySpec, Cost};
use crate::bellman::{zero_grid, Bellman, BellmanError, FixedPoint};
use crate::config::{parse_config, ConfigError, RunConfig};
use crate::measures::{DiscreteMeasure, SampleSet};
use crate::models::expr::{Expr, VarKind};
use crate::models::ControlProblem;
use crate::rate::{config_digest, hard_instance_family, run_family_sweep, RateError, SweepSettings};
use crate::rollout::{simulate_many, summarize, NoiseModel, RolloutError};

#[derive(Debug, Parser)]
#[command(name = "drsc", version, about = "Distributionally robust stochastic control solvers")]
pub struct Cli {
    /// Worker threads (0 = all cores). `DRSC_THREADS` overrides.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Log solver progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust value iteration; writes the value function and policy.
    Solve(SolveArgs),
    /// Sample-size sweep of empirical-center errors with a log-log fit.
    RateSweep(RateArgs),
    /// Roll out the robust policy.
    Simulate(SimulateArgs),
    /// One worst-case expectation.
    DroEval(DroArgs),
    /// Check a configuration file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_value: Option<PathBuf>,
    #[arg(long)]
    pub out_policy: Option<PathBuf>,
    /// Solve report as JSON (printed to stdout when absent).
    #[arg(long)]
    pub out_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Ascending sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes `<out>.csv` and `<out>.json`. Without it the
    /// files are `rate_report.csv` and `rate_summary.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the configured center by this many two-point laws
    /// `(1 - eps) delta_0 + eps delta_1` with log-spaced `eps`.
    #[arg(long)]
    pub family: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps_lo: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eps_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseChoice {
    Nominal,
    WorstCase,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseChoice::Nominal)]
    pub noise: NoiseChoice,
    #[arg(long, default_value = "trajectories.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "summary.json")]
    pub summary: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Wasserstein,
    Fk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostChoice {
    Sq,
    Abs,
}

#[derive(Debug, Args)]
pub struct DroArgs {
    /// Sample CSV defining the empirical center.
    #[arg(long)]
    pub center: PathBuf,
    /// The center file has a header row.
    #[arg(long)]
    pub header: bool,
    /// `identity`, `neg`, `square`, `abs`, an expression in `w_0, w_1, ...`
    /// or a CSV of `w..., value` rows (which then also fixes the candidates).
    #[arg(long)]
    pub g: String,
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long, value_enum, default_value_t = CostChoice::Sq)]
    pub cost: CostChoice,
    /// Candidate points per dimension over the center's bounding box.
    #[arg(long, default_value_t = 2001)]
    pub candidates: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConverged(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<BellmanError> for CliError {
    fn from(e: BellmanError) -> Self {
        match e {
            BellmanError::NonConverged(_) | BellmanError::NonConvergedOuter { .. } => {
                CliError::NonConverged(e.to_string())
            }
            BellmanError::Ambiguity(_) | BellmanError::InvalidGrid(_) | BellmanError::InvalidOptions(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        match e {
            RolloutError::Bellman(b) => b.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<RateError> for CliError {
    fn from(e: RateError) -> Self {
        match e {
            RateError::Bellman(b) => b.into(),
            RateError::InvalidSweep(_) | RateError::Measure(_) => CliError::Validation(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

struct Setup {
    cfg: RunConfig,
    problem: ControlProblem,
    center: DiscreteMeasure,
    candidates: Option<Vec<Vec<f64>>>,
}

fn setup(path: &Path) -> Result<Setup, CliError> {
    let cfg = load_config(path)?;
    let problem = cfg.problem()?;
    let center = cfg.noise.center(path.parent()).map_err(|e| CliError::Validation(format!("noise: {e}")))?;
    if center.dim() != problem.noise_dim() {
        return Err(CliError::Validation(format!(
            "noise: center has dimension {}, model expects {}",
            center.dim(),
            problem.noise_dim()
        )));
    }
    let candidates = cfg.candidates(&problem, &center);
    Ok(Setup { cfg, problem, center, candidates })
}

impl Setup {
    fn operator(&self) -> Result<Bellman<'_>, CliError> {
        let op = Bellman::new(
            &self.problem,
            self.cfg.ambiguity,
            self.center.clone(),
            self.candidates.as_deref(),
            self.cfg.solver.dual(),
        )?;
        Ok(op.with_outer(self.cfg.solver.outer()))
    }

    /// Fixed point, or the best iterate together with the error it raised.
    fn solve(&self, op: &Bellman<'_>) -> Result<(FixedPoint, Option<CliError>), CliError> {
        let v0 = zero_grid(&self.problem, Some(&self.cfg.state_grid))?;
        match op.solve_fixed_point(self.cfg.adversary, v0, self.cfg.solver.tol, self.cfg.solver.max_iters) {
            Ok(fp) => Ok((fp, None)),
            Err(BellmanError::NonConverged(fp)) => {
                let msg = format!(
                    "value iteration stopped after {} iterations with residual {:e}",
                    fp.report.iterations, fp.report.final_residual
                );
                Ok((*fp, Some(CliError::NonConverged(msg))))
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn run_solve(a: &SolveArgs) -> Result<(), CliError> {
    let s = setup(&a.config)?;
    let digest = s.cfg.digest();
    let op = s.operator()?;
    let (fp, failure) = s.solve(&op)?;
    let value_path = a.out_value.clone().or(s.cfg.output.value.clone()).unwrap_or_else(|| "value.csv".into());
    let policy_path = a.out_policy.clone().or(s.cfg.output.policy.clone()).unwrap_or_else(|| "policy.csv".into());
    write_atomic(&value_path, |w| {
        writeln!(w, "# config_digest {digest}")?;
        fp.value.write_csv(&mut *w).map_err(csv_io)
    })?;
    write_atomic(&policy_path, |w| {
        writeln!(w, "# config_digest {digest}")?;
        fp.policy.write_csv(&mut *w).map_err(csv_io)
    })?;
    let report = json!({
        "iterations": fp.report.iterations,
        "final_residual": fp.report.final_residual,
        "error_bound": fp.report.error_bound,
        "wall_time": fp.report.wall_time,
        "outer_gap": fp.report.outer_gap,
        "converged": failure.is_none(),
        "config_digest": digest,
    });
    match a.out_report.clone().or(s.cfg.output.report.clone()) {
        Some(p) => write_json(&p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    failure.map_or(Ok(()), Err)
}

fn run_rate(a: &RateArgs) -> Result<(), CliError> {
    let s = setup(&a.config)?;
    let centers = match a.family {
        Some(m) => {
            if s.problem.noise_dim() != 1 {
                return Err(CliError::Validation("--family requires one-dimensional noise".into()));
            }
            hard_instance_family(a.eps_lo, a.eps_hi, m).map_err(|e| CliError::Validation(format!("--family: {e}")))?
        }
        None => vec![s.center.clone()],
    };
    let mut settings = SweepSettings::new(a.n.clone(), a.trials, a.seed);
    settings.adversary = s.cfg.adversary;
    settings.tol = s.cfg.solver.tol;
    settings.max_iters = s.cfg.solver.max_iters;
    settings.nodes = Some(s.cfg.state_grid.clone());
    settings.dual = s.cfg.solver.dual();
    let digest = config_digest(&json!({
        "config": &s.cfg,
        "n": &a.n,
        "trials": a.trials,
        "seed": a.seed,
        "family": a.family.map(|m| json!({"members": m, "eps_lo": a.eps_lo, "eps_hi": a.eps_hi})),
    }));
    let report =
        run_family_sweep(&s.problem, s.cfg.ambiguity, &centers, s.candidates.as_deref(), &settings, digest.clone())?;
    let (csv_path, json_path) = match &a.out {
        Some(p) => (p.with_extension("csv"), p.with_extension("json")),
        None => (PathBuf::from("rate_report.csv"), PathBuf::from("rate_summary.json")),
    };
    let with_member = centers.len() > 1;
    write_atomic(&csv_path, |w| {
        writeln!(w, "# config_digest {digest}")?;
        report.write_csv(&mut *w, with_member).map_err(csv_io)
    })?;
    let fit = report.fit.as_ref();
    let summary = json!({
        "slope": fit.map(|f| f.slope),
        "intercept": fit.map(|f| f.intercept),
        "stderr": fit.map(|f| f.stderr),
        "medians": &report.medians,
        "warnings": report.warnings,
        "audit_violations": report.audit_violations,
        "config_digest": digest,
    });
    write_json(&json_path, &summary)?;
    match fit {
        Some(f) => println!("slope {:.4} (stderr {:.4}), {} failed trials", f.slope, f.stderr, report.warnings),
        None => println!("no slope: fewer than two sample sizes with data, {} failed trials", report.warnings),
    }
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let s = setup(&a.config)?;
    let op = s.operator()?;
    let (fp, failure) = s.solve(&op)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let noise = match a.noise {
        NoiseChoice::Nominal => NoiseModel::Nominal(&s.center),
        NoiseChoice::WorstCase => NoiseModel::WorstCase { op: &op, value: &fp.value },
    };
    let trajs = simulate_many(&s.problem, &fp.policy, &noise, &a.x0, a.horizon, a.seed, a.trajectories)?;
    let digest = config_digest(&json!({
        "config": &s.cfg,
        "x0": &a.x0,
        "horizon": a.horizon,
        "trajectories": a.trajectories,
        "seed": a.seed,
        "noise": format!("{:?}", a.noise),
    }));
    write_atomic(&a.out, |w| {
        writeln!(w, "# config_digest {digest}")?;
        let mut cw = csv::Writer::from_writer(&mut *w);
        for (i, t) in trajs.iter().enumerate() {
            t.write_csv(&mut cw, Some(i), i == 0).map_err(csv_io)?;
        }
        cw.flush()
    })?;
    let returns: Vec<f64> = trajs.iter().map(|t| t.discounted_return).collect();
    let sum = summarize(&returns);
    write_json(
        &a.summary,
        &json!({"mean": sum.mean, "stderr": sum.stderr, "n_traj": sum.n_traj, "config_digest": digest}),
    )?;
    println!("mean discounted return {:.6} (stderr {:.6}, {} trajectories)", sum.mean, sum.stderr, sum.n_traj);
    Ok(())
}

fn bits(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

fn read_table(path: &Path, dim: usize) -> Result<HashMap<Vec<u64>, f64>, CliError> {
    let rows = SampleSet::from_csv_path(path, false).map_err(|e| CliError::Validation(format!("--g: {e}")))?;
    if rows.dim() != dim + 1 {
        return Err(CliError::Validation(format!(
            "--g: {} has {} columns, expected {} (noise coordinates then value)",
            path.display(),
            rows.dim(),
            dim + 1
        )));
    }
    Ok(rows.rows().iter().map(|r| (bits(&r[..dim]), r[dim])).collect())
}

fn builtin(name: &str, dim: usize) -> Result<Option<Expr>, CliError> {
    let text = match name {
        "identity" | "neg" | "square" | "abs" if dim != 1 => {
            return Err(CliError::Validation(format!("--g {name} needs one-dimensional noise")));
        }
        "identity" => "w_0",
        "neg" => "-w_0",
        "square" => "w_0 * w_0",
        "abs" => "max(w_0, -w_0)",
        _ => return Ok(None),
    };
    Ok(Some(Expr::parse(text).expect("builtin expressions parse")))
}

fn run_dro(a: &DroArgs) -> Result<(), CliError> {
    let samples =
        SampleSet::from_csv_path(&a.center, a.header).map_err(|e| CliError::Validation(format!("--center: {e}")))?;
    let center = DiscreteMeasure::from_samples(&samples).map_err(|e| CliError::Validation(format!("--center: {e}")))?;
    let dim = center.dim();
    let spec = match a.family {
        Family::Wasserstein => {
            let cost = match a.cost {
                CostChoice::Sq => Cost::SquaredEuclidean,
                CostChoice::Abs => Cost::Euclidean,
            };
            AmbiguitySpec::wasserstein(a.delta, cost)
        }
        Family::Fk => {
            let k = a.k.ok_or_else(|| CliError::Validation("--family fk requires --k".into()))?;
            AmbiguitySpec::fk(k, a.delta)
        }
    };
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    if a.candidates < 2 {
        return Err(CliError::Validation("--candidates must be at least 2".into()));
    }
    let table_path = Path::new(&a.g);
    let (g, candidates): (Box<dyn Fn(&[f64]) -> f64>, Vec<Vec<f64>>) = if let Some(e) = builtin(&a.g, dim)? {
        (Box::new(move |w: &[f64]| e.eval(&[], &[], w)), Vec::new())
    } else if table_path.is_file() {
        let table = read_table(table_path, dim)?;
        let points = table.keys().map(|k| k.iter().map(|&b| f64::from_bits(b)).collect()).collect();
        (Box::new(move |w: &[f64]| table.get(&bits(w)).copied().unwrap_or(f64::NAN)), points)
    } else {
        let e = Expr::parse(&a.g).map_err(|e| CliError::Validation(format!("--g: {e}")))?;
        if e.max_index(VarKind::State).is_some() || e.max_index(VarKind::Action).is_some() {
            return Err(CliError::Validation("--g may only use noise variables w_i".into()));
        }
        if matches!(e.max_index(VarKind::Noise), Some(i) if i >= dim) {
            return Err(CliError::Validation(format!("--g uses a noise index beyond dimension {dim}")));
        }
        (Box::new(move |w: &[f64]| e.eval(&[], &[], w)), Vec::new())
    };
    let candidates = if candidates.is_empty() && spec.is_wasserstein() {
        let mut c = box_grid(&center.bounding_box(), a.candidates);
        c.extend(center.atoms().iter().cloned());
        c
    } else {
        let mut c = candidates;
        c.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        c
    };
    let r = worst_case(g, &center, &spec, &candidates).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{},{},{}", r.value, r.dual_point, r.certificate_gap);
    Ok(())
}

fn run_validate(a: &ValidateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    println!("ok {} config_digest {}", cfg.model.kind(), cfg.digest());
    Ok(())
}

fn thread_count(flag: usize) -> Result<usize, CliError> {
    match std::env::var("DRSC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("DRSC_THREADS must be a nonnegative integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cli.threads)?)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::RateSweep(a) => run_rate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::DroEval(a) => run_dro(a),
        Command::Validate(a) => run_validate(a),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
