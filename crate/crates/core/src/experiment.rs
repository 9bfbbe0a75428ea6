//! Experiment runner: configuration, solver dispatch, output files and run
//! comparison.
//!
//! A configuration is a list of `key=value` lines. The same keys are
//! accepted from a file and from command-line overrides, and the resolved
//! configuration is written next to the outputs in the same format, so a
//! run can be replayed from it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::{run_sync_gd, DenseBfgs};
use crate::data::{generate_synthetic, load_libsvm, partition, SynthConfig};
use crate::diagnostics::{
    check_condition13, fit_epoch_rate, stepsize_window, theoretical_rate, ApproxQuality, Condition13, RateReport,
    RateVariant, SpectrumBounds, StepsizeWindow, TrajectoryQuality,
};
use crate::master::master_init;
use crate::memory::LimitedMemoryEstimate;
use crate::objectives::{global_constants, global_lipschitz, reference_solve, ReferenceOptimum, Shard};
use crate::simulator::{run, DelayModel, Metrics, RunOutput, StopReason, StopRule, Trace};
use crate::worker::{HessianApprox, WorkerState};
use crate::{Error, Result, Vector, DEFAULT_DENSE_CAP};

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "LDQN_OUTPUT_DIR";

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Ldqn,
    Daveqn,
    Gd,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Ldqn => "ldqn",
            Solver::Daveqn => "daveqn",
            Solver::Gd => "gd",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldqn" => Ok(Solver::Ldqn),
            "daveqn" => Ok(Solver::Daveqn),
            "gd" => Ok(Solver::Gd),
            other => Err(Error::Config(format!("unknown solver '{other}' (expected ldqn, daveqn or gd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Libsvm(PathBuf),
    Synthetic { n_samples: usize, dim: usize, sparsity: f64, noise_sigma2: f64 },
}

/// Either a fixed value or one derived from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub solver: Solver,
    pub dataset: DatasetSpec,
    pub normalize: bool,
    pub lambda: f64,
    pub workers: usize,
    pub memory: usize,
    pub eta: f64,
    /// Initial estimate scale; `auto` takes the smoothness estimate.
    pub gamma0: Auto,
    /// Gradient descent step; `auto` is `1/L`.
    pub gd_step: Auto,
    pub delay: DelayModel,
    pub seed: u64,
    pub stop: StopRule,
    pub output_dir: PathBuf,
    /// Updates between approximation-quality snapshots; 0 disables them.
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: Solver::Ldqn,
            dataset: DatasetSpec::Synthetic { n_samples: 2000, dim: 50, sparsity: 0.0, noise_sigma2: 0.09 },
            normalize: true,
            lambda: 0.01,
            workers: 4,
            memory: 20,
            eta: 0.8,
            gamma0: Auto::Auto,
            gd_step: Auto::Auto,
            delay: DelayModel::Heterogeneous { base: 1.0, spread: 4.0 },
            seed: 0,
            stop: StopRule::default(),
            output_dir: PathBuf::from("ldqn-out"),
            snapshot_every: 25,
        }
    }
}

/// Keys in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "solver",
    "data",
    "synthetic",
    "normalize",
    "lambda",
    "workers",
    "memory",
    "eta",
    "gamma0",
    "gd_step",
    "delay",
    "seed",
    "max_updates",
    "max_epochs",
    "grad_tol",
    "subopt_tol",
    "output_dir",
    "snapshot_every",
];

fn cfg_err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}={value}: {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| cfg_err(key, value, "not a valid number"))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Auto> {
    match value.trim() {
        "auto" => Ok(Auto::Auto),
        v => parse_num(key, v).map(Auto::Value),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}

/// `d=50,N=2000[,sparsity=0.9][,noise=0.09]`.
pub fn parse_synthetic(value: &str) -> Result<DatasetSpec> {
    let (mut n, mut d, mut sparsity, mut noise) = (None, None, 0.0, 0.09);
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| cfg_err("synthetic", value, "expected k=v pairs"))?;
        match k.trim() {
            "N" | "n" => n = Some(parse_num("synthetic", v)?),
            "d" => d = Some(parse_num("synthetic", v)?),
            "sparsity" => sparsity = parse_num("synthetic", v)?,
            "noise" => noise = parse_num("synthetic", v)?,
            other => return Err(cfg_err("synthetic", value, &format!("unknown field '{other}'"))),
        }
    }
    match (n, d) {
        (Some(n_samples), Some(dim)) if n_samples > 0 && dim > 0 => {
            Ok(DatasetSpec::Synthetic { n_samples, dim, sparsity, noise_sigma2: noise })
        }
        _ => Err(cfg_err("synthetic", value, "needs positive d and N")),
    }
}

/// `constant:L`, `uniform:LO,HI`, `per-worker:L1,L2,..`,
/// `heterogeneous:BASE,SPREAD`, `bounded:D` or `scripted:I1,I2,..`.
pub fn parse_delay(value: &str) -> Result<DelayModel> {
    let (kind, args) = value.split_once(':').unwrap_or((value, ""));
    let key = "delay";
    let model = match kind.trim() {
        "constant" => DelayModel::Constant { latency: parse_num(key, args)? },
        "uniform" => match parse_list::<u32>(key, args)?.as_slice() {
            [lo, hi] => DelayModel::UniformInteger { lo: *lo, hi: *hi },
            _ => return Err(cfg_err(key, value, "uniform needs LO,HI")),
        },
        "per-worker" => DelayModel::PerWorkerConstant { latencies: parse_list(key, args)? },
        "heterogeneous" => match parse_list::<f64>(key, args)?.as_slice() {
            [base, spread] => DelayModel::Heterogeneous { base: *base, spread: *spread },
            _ => return Err(cfg_err(key, value, "heterogeneous needs BASE,SPREAD")),
        },
        "bounded" => DelayModel::BoundedDelay { max_delay: parse_num(key, args)? },
        "scripted" => DelayModel::Scripted { order: parse_list(key, args)? },
        _ => return Err(cfg_err(key, value, "unknown delay model")),
    };
    Ok(model)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_delay(model: &DelayModel) -> String {
    match model {
        DelayModel::Constant { latency } => format!("constant:{latency}"),
        DelayModel::UniformInteger { lo, hi } => format!("uniform:{lo},{hi}"),
        DelayModel::PerWorkerConstant { latencies } => format!("per-worker:{}", join(latencies)),
        DelayModel::Heterogeneous { base, spread } => format!("heterogeneous:{base},{spread}"),
        DelayModel::BoundedDelay { max_delay } => format!("bounded:{max_delay}"),
        DelayModel::Scripted { order } => format!("scripted:{}", join(order)),
    }
}

fn format_auto(a: Auto) -> String {
    match a {
        Auto::Auto => "auto".into(),
        Auto::Value(v) => v.to_string(),
    }
}

fn format_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "solver" => self.solver = v.parse()?,
            "data" => {
                if v.is_empty() {
                    return Err(cfg_err(key, value, "empty path"));
                }
                self.dataset = DatasetSpec::Libsvm(PathBuf::from(v));
            }
            "synthetic" => self.dataset = parse_synthetic(v)?,
            "normalize" => {
                self.normalize = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(cfg_err(key, value, "expected true or false")),
                }
            }
            "lambda" => self.lambda = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "memory" => self.memory = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "gamma0" => self.gamma0 = parse_auto(key, v)?,
            "gd_step" => self.gd_step = parse_auto(key, v)?,
            "delay" => self.delay = parse_delay(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "max_updates" => self.stop.max_updates = parse_num(key, v)?,
            "max_epochs" => self.stop.max_epochs = parse_opt(key, v)?,
            "grad_tol" => self.stop.grad_tol = parse_opt(key, v)?,
            "subopt_tol" => self.stop.subopt_tol = parse_opt(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "snapshot_every" => self.snapshot_every = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", k + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// The full configuration as `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match *key {
                "solver" => self.solver.as_str().to_string(),
                "data" => match &self.dataset {
                    DatasetSpec::Libsvm(p) => p.display().to_string(),
                    DatasetSpec::Synthetic { .. } => continue,
                },
                "synthetic" => match &self.dataset {
                    DatasetSpec::Synthetic { n_samples, dim, sparsity, noise_sigma2 } => {
                        format!("d={dim},N={n_samples},sparsity={sparsity},noise={noise_sigma2}")
                    }
                    DatasetSpec::Libsvm(_) => continue,
                },
                "normalize" => self.normalize.to_string(),
                "lambda" => self.lambda.to_string(),
                "workers" => self.workers.to_string(),
                "memory" => self.memory.to_string(),
                "eta" => self.eta.to_string(),
                "gamma0" => format_auto(self.gamma0),
                "gd_step" => format_auto(self.gd_step),
                "delay" => format_delay(&self.delay),
                "seed" => self.seed.to_string(),
                "max_updates" => self.stop.max_updates.to_string(),
                "max_epochs" => format_opt(self.stop.max_epochs),
                "grad_tol" => format_opt(self.stop.grad_tol),
                "subopt_tol" => format_opt(self.stop.subopt_tol),
                "output_dir" => self.output_dir.display().to_string(),
                "snapshot_every" => self.snapshot_every.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        for (name, a) in [("gamma0", self.gamma0), ("gd_step", self.gd_step)] {
            if let Auto::Value(v) = a {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.stop.max_updates == 0 {
            return Err(Error::Config("max_updates must be at least 1".into()));
        }
        self.delay.validate(self.workers)
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Problem data ready for a solver.
#[derive(Debug, Clone)]
pub struct Problem {
    pub shards: Vec<Shard>,
    pub dim: usize,
    pub reference: ReferenceOptimum,
    pub mu: f64,
    pub l: f64,
}

/// Loads or generates the dataset, partitions it and solves for the
/// reference optimum.
pub fn prepare_problem(cfg: &RunConfig) -> Result<Problem> {
    let mut dataset = match &cfg.dataset {
        DatasetSpec::Libsvm(path) => load_libsvm(path)?,
        DatasetSpec::Synthetic { n_samples, dim, sparsity, noise_sigma2 } => {
            let mut sc = SynthConfig::new(*n_samples, *dim, cfg.seed);
            sc.sparsity = *sparsity;
            sc.noise_sigma2 = *noise_sigma2;
            generate_synthetic(&sc)?
        }
    };
    if cfg.normalize {
        dataset.normalize_min_max();
    }
    if dataset.len() < cfg.workers {
        return Err(Error::Config(format!("{} samples cannot feed {} workers", dataset.len(), cfg.workers)));
    }
    let shards = partition(&dataset, cfg.workers, cfg.seed, cfg.lambda)?;
    from_shards(shards)
}

/// Wraps already-built shards with their constants and reference optimum.
pub fn from_shards(shards: Vec<Shard>) -> Result<Problem> {
    let dim = shards.first().ok_or_else(|| Error::Config("no shards".into()))?.dim();
    let reference = reference_solve(&shards)?;
    let mu = global_constants(&shards).mu;
    let l = global_lipschitz(&shards);
    if !(mu > 0.0) {
        return Err(Error::Config("objective is not strongly convex; use lambda > 0".into()));
    }
    Ok(Problem { shards, dim, reference, mu, l })
}

/// Theory-side quantities for a quasi-Newton run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TheoryReport {
    pub snapshots: usize,
    pub approx_quality: Option<ApproxQuality>,
    pub spectrum: Option<SpectrumBounds>,
    pub condition13: Option<Condition13>,
    pub window: Option<StepsizeWindow>,
    pub eta_in_window: Option<bool>,
    pub rho_theory: Option<f64>,
    pub rate: Option<RateReport>,
    pub rate_note: Option<String>,
}

/// Everything a run produces besides the trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub solver: Solver,
    pub dim: usize,
    pub workers: usize,
    pub memory: usize,
    pub eta: f64,
    pub gamma0: f64,
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub f_star: f64,
    pub reference_grad_norm: f64,
    pub stop_reason: StopReason,
    pub updates: usize,
    pub epochs_completed: usize,
    pub epoch_starts: Vec<usize>,
    pub virtual_time: f64,
    pub final_suboptimality: Option<f64>,
    pub final_grad_norm: f64,
    pub final_dist_to_opt: Option<f64>,
    pub skipped_messages: usize,
    pub singular_events: usize,
    pub refactorizations: usize,
    pub peak_worker_state_floats: usize,
    pub peak_worker_estimate_floats: usize,
    pub peak_worker_state_bytes: usize,
    pub iterate_residual: Option<f64>,
    pub theory: TheoryReport,
}

/// Result of [`execute`]: the trace plus its report.
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: RunOutput,
    pub report: RunReport,
}

struct QnStats {
    singular_events: usize,
    refactorizations: usize,
    peak_state: usize,
    peak_estimate: usize,
    iterate_residual: Option<f64>,
    quality: TrajectoryQuality,
}

fn run_quasi_newton<E: HessianApprox>(
    cfg: &RunConfig,
    problem: &Problem,
    mut workers: Vec<WorkerState<E>>,
) -> Result<(RunOutput, QnStats)> {
    let mut master = master_init(cfg.eta, &workers)?;
    let metrics = Metrics { shards: &problem.shards, reference: Some(&problem.reference) };
    let snapshots = cfg.snapshot_every > 0 && problem.dim <= DEFAULT_DENSE_CAP;
    let mut quality = TrajectoryQuality::default();
    let mut snapshot_err = None;
    if snapshots {
        quality.observe(&workers)?;
    }
    let output = run(&mut workers, &mut master, &cfg.delay, cfg.seed, &cfg.stop, metrics, |ws, m, _| {
        if snapshots && snapshot_err.is_none() && m.t() % cfg.snapshot_every == 0 {
            if let Err(e) = quality.observe(ws) {
                snapshot_err = Some(e);
            }
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    let iterate_residual = if problem.dim <= DEFAULT_DENSE_CAP { Some(master.iterate_residual(&workers)?) } else { None };
    let stats = QnStats {
        singular_events: master.singular_events(),
        refactorizations: master.refactorizations(),
        peak_state: workers.iter().map(|w| w.peak_state_floats()).max().unwrap_or(0),
        peak_estimate: workers.iter().map(|w| w.peak_estimate_floats()).max().unwrap_or(0),
        iterate_residual,
        quality,
    };
    Ok((output, stats))
}

fn theory_report(cfg: &RunConfig, problem: &Problem, output: &RunOutput, quality: &TrajectoryQuality) -> TheoryReport {
    let kappa = problem.l / problem.mu;
    let mut theory = TheoryReport {
        snapshots: quality.snapshots,
        approx_quality: quality.quality,
        spectrum: quality.spectrum,
        ..TheoryReport::default()
    };
    if let Some(q) = quality.quality {
        theory.condition13 = Some(check_condition13(q.eps, kappa));
        let window = stepsize_window(q.eps_d, q.eps_u, kappa);
        theory.eta_in_window = Some(window.contains(cfg.eta));
        theory.window = Some(window);
    }
    if let Some(s) = quality.spectrum {
        theory.rho_theory =
            Some(theoretical_rate(cfg.workers, s, cfg.eta, problem.mu, problem.l, RateVariant::Derivation));
    }
    let certified = theory.condition13.is_some_and(|c| c.holds) && theory.eta_in_window == Some(true);
    let rho = if certified { theory.rho_theory } else { None };
    match fit_epoch_rate(&output.trace, &output.epochs, rho, theory.window) {
        Ok(r) => theory.rate = Some(r),
        Err(e) => theory.rate_note = Some(e.to_string()),
    }
    theory
}

/// Runs the configured solver without touching the filesystem (except to
/// read a LIBSVM file).
pub fn execute(cfg: &RunConfig) -> Result<Execution> {
    cfg.validate()?;
    let problem = prepare_problem(cfg)?;
    execute_on(cfg, &problem)
}

/// Runs the configured solver on a prepared problem.
pub fn execute_on(cfg: &RunConfig, problem: &Problem) -> Result<Execution> {
    cfg.validate()?;
    if problem.shards.len() != cfg.workers {
        return Err(Error::Config(format!("{} shards for {} workers", problem.shards.len(), cfg.workers)));
    }
    let d = problem.dim;
    let x0 = Vector::zeros(d);
    let gamma0 = match cfg.gamma0 {
        Auto::Auto => problem.l,
        Auto::Value(v) => v,
    };

    let (output, stats) = match cfg.solver {
        Solver::Ldqn => {
            let workers = problem
                .shards
                .iter()
                .enumerate()
                .map(|(i, s)| WorkerState::new(i, s.clone(), x0.clone(), LimitedMemoryEstimate::new(d, gamma0, cfg.memory)?))
                .collect::<Result<Vec<_>>>()?;
            let (o, s) = run_quasi_newton(cfg, problem, workers)?;
            (o, Some(s))
        }
        Solver::Daveqn => {
            if d > DEFAULT_DENSE_CAP {
                return Err(Error::Config(format!(
                    "daveqn keeps a dense {d}x{d} matrix on every worker, which exceeds the memory cap \
                     (d <= {DEFAULT_DENSE_CAP}); DAve-QN cannot run on this problem, use --solver ldqn"
                )));
            }
            let workers = problem
                .shards
                .iter()
                .enumerate()
                .map(|(i, s)| WorkerState::new(i, s.clone(), x0.clone(), DenseBfgs::new(d, gamma0)?))
                .collect::<Result<Vec<_>>>()?;
            let (o, s) = run_quasi_newton(cfg, problem, workers)?;
            (o, Some(s))
        }
        Solver::Gd => {
            let step = match cfg.gd_step {
                Auto::Auto => 1.0 / problem.l,
                Auto::Value(v) => v,
            };
            let metrics = Metrics { shards: &problem.shards, reference: Some(&problem.reference) };
            let o = run_sync_gd(&problem.shards, x0.clone(), step, &cfg.delay, cfg.seed, &cfg.stop, metrics)?;
            (o, None)
        }
    };

    let last = output.trace.rows.last().expect("trace has a starting row");
    let theory = match &stats {
        Some(s) => theory_report(cfg, problem, &output, &s.quality),
        None => TheoryReport::default(),
    };
    let gd_state = 3 * d;
    let report = RunReport {
        solver: cfg.solver,
        dim: d,
        workers: cfg.workers,
        memory: cfg.memory,
        eta: match (cfg.solver, cfg.gd_step) {
            (Solver::Gd, Auto::Auto) => 1.0 / problem.l,
            (Solver::Gd, Auto::Value(v)) => v,
            _ => cfg.eta,
        },
        gamma0,
        mu: problem.mu,
        l: problem.l,
        kappa: problem.l / problem.mu,
        f_star: problem.reference.f_star,
        reference_grad_norm: problem.reference.grad_norm,
        stop_reason: output.stop_reason,
        updates: last.t,
        epochs_completed: output.epochs.completed(),
        epoch_starts: output.epochs.starts.clone(),
        virtual_time: last.virtual_time,
        final_suboptimality: last.suboptimality,
        final_grad_norm: last.grad_norm,
        final_dist_to_opt: last.dist_to_opt,
        skipped_messages: output.skipped_messages,
        singular_events: stats.as_ref().map_or(0, |s| s.singular_events),
        refactorizations: stats.as_ref().map_or(0, |s| s.refactorizations),
        peak_worker_state_floats: stats.as_ref().map_or(gd_state, |s| s.peak_state),
        peak_worker_estimate_floats: stats.as_ref().map_or(0, |s| s.peak_estimate),
        peak_worker_state_bytes: 8 * stats.as_ref().map_or(gd_state, |s| s.peak_state),
        iterate_residual: stats.as_ref().and_then(|s| s.iterate_residual),
        theory,
    };
    Ok(Execution { output, report })
}

/// Runs the configuration and writes `trace.csv`, `report.json` and
/// `config.txt` into the output directory. Returns that directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<PathBuf> {
    let exec = execute(cfg)?;
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = dir.clone();
    std::fs::write(dir.join(TRACE_FILE), exec.output.trace.to_csv())?;
    let mut json = serde_json::to_string_pretty(&exec.report)?;
    json.push('\n');
    std::fs::write(dir.join(REPORT_FILE), json)?;
    std::fs::write(dir.join(CONFIG_FILE), resolved.to_text())?;
    Ok(dir)
}

/// When a run first reached the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reach {
    pub t: usize,
    pub epoch: usize,
    pub virtual_time: f64,
}

/// Side-by-side view of several traces of the same problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub names: Vec<String>,
    pub tol: f64,
    /// Suboptimality at the end of each epoch (last row with that epoch or
    /// an earlier one).
    pub by_epoch: Vec<(usize, Vec<Option<f64>>)>,
    /// Suboptimality at each time point (last row at or before it).
    pub by_time: Vec<(f64, Vec<Option<f64>>)>,
    pub time_to_tol: Vec<Option<Reach>>,
}

/// Number of virtual-time points in a comparison table.
pub const COMPARE_TIME_POINTS: usize = 50;

/// Aligns traces by epoch and by virtual time. All traces must carry
/// suboptimality values and start from the same objective value.
pub fn compare_runs(traces: &[(String, Trace)], tol: f64) -> Result<Comparison> {
    if traces.is_empty() {
        return Err(Error::IncompatibleTraces("nothing to compare".into()));
    }
    let mut start = None;
    for (name, trace) in traces {
        let first = trace.rows.first().ok_or_else(|| Error::IncompatibleTraces(format!("{name}: empty trace")))?;
        if trace.rows.iter().any(|r| r.suboptimality.is_none()) {
            return Err(Error::IncompatibleTraces(format!("{name}: no suboptimality values (f* unknown)")));
        }
        let s0 = first.suboptimality.unwrap();
        match start {
            None => start = Some(s0),
            Some(s) => {
                if (s0 - s).abs() > 1e-9 * s.abs().max(1e-300) {
                    return Err(Error::IncompatibleTraces(format!(
                        "{name}: starting suboptimality {s0} differs from {s}; not the same problem"
                    )));
                }
            }
        }
    }

    let max_epoch = traces.iter().flat_map(|(_, t)| t.rows.last()).map(|r| r.epoch).max().unwrap();
    let by_epoch = (0..=max_epoch)
        .map(|e| {
            let vals = traces
                .iter()
                .map(|(_, t)| {
                    let k = t.rows.partition_point(|r| r.epoch <= e);
                    (k > 0 && t.rows.last().unwrap().epoch >= e).then(|| t.rows[k - 1].suboptimality.unwrap())
                })
                .collect();
            (e, vals)
        })
        .collect();

    let t_max = traces.iter().flat_map(|(_, t)| t.rows.last()).map(|r| r.virtual_time).fold(0.0, f64::max);
    let by_time = (0..=COMPARE_TIME_POINTS)
        .map(|k| {
            let tau = t_max * k as f64 / COMPARE_TIME_POINTS as f64;
            let vals = traces
                .iter()
                .map(|(_, t)| {
                    let end = t.rows.last().unwrap().virtual_time;
                    let k = t.rows.partition_point(|r| r.virtual_time <= tau);
                    (k > 0 && tau <= end).then(|| t.rows[k - 1].suboptimality.unwrap())
                })
                .collect();
            (tau, vals)
        })
        .collect();

    let time_to_tol = traces
        .iter()
        .map(|(_, t)| t.first_below(tol).map(|r| Reach { t: r.t, epoch: r.epoch, virtual_time: r.virtual_time }))
        .collect();

    Ok(Comparison { names: traces.iter().map(|(n, _)| n.clone()).collect(), tol, by_epoch, by_time, time_to_tol })
}

impl Comparison {
    fn table<K: std::fmt::Display>(&self, key: &str, rows: &[(K, Vec<Option<f64>>)]) -> String {
        let mut out = format!("{key},{}\n", self.names.join(","));
        for (k, vals) in rows {
            let cells: Vec<String> = vals.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()).collect();
            let _ = writeln!(out, "{k},{}", cells.join(","));
        }
        out
    }

    pub fn epoch_csv(&self) -> String {
        self.table("epoch", &self.by_epoch)
    }

    pub fn time_csv(&self) -> String {
        self.table("virtual_time", &self.by_time)
    }

    /// Plain-text summary of time to tolerance.
    pub fn summary(&self) -> String {
        let mut out = format!("time to suboptimality <= {}\n", self.tol);
        let _ = writeln!(out, "{:<24} {:>10} {:>8} {:>14}", "run", "updates", "epochs", "virtual_time");
        for (name, reach) in self.names.iter().zip(&self.time_to_tol) {
            match reach {
                Some(r) => {
                    let _ = writeln!(out, "{name:<24} {:>10} {:>8} {:>14}", r.t, r.epoch, r.virtual_time);
                }
                None => {
                    let _ = writeln!(out, "{name:<24} {:>10} {:>8} {:>14}", "-", "-", "-");
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("solver=gd\nsynthetic=d=5,N=40\ndelay=per-worker:1,3.5\nworkers=2\nmax_epochs=4\n").unwrap();
        assert_eq!(cfg.solver, Solver::Gd);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);

        cfg.set("data", "a/b.svm.gz").unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::from_text("bogus=1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("workers"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("eta=abc"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("synthetic=d=0,N=4").is_err());
        let cfg = RunConfig::from_text("eta=-1").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_text("workers=5\ndelay=bounded:2").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn delay_specs() {
        for s in ["constant:2", "uniform:1,5", "per-worker:1,3.5", "heterogeneous:1,4", "bounded:3", "scripted:0,1"] {
            assert_eq!(format_delay(&parse_delay(s).unwrap()), s);
        }
        assert!(parse_delay("gaussian:1").is_err());
    }
}
