use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldqn::experiment::{compare_runs, run_experiment, RunConfig};
use ldqn::simulator::Trace;
use ldqn::{Error, Result};

#[derive(Parser)]
#[command(name = "ldqn", version, about = "Asynchronous limited-memory distributed quasi-Newton experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write trace.csv, report.json and config.txt.
    Run(RunArgs),
    /// Align several traces by epoch and virtual time.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key=value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ldqn, daveqn or gd.
    #[arg(long)]
    solver: Option<String>,
    /// LIBSVM file (.gz accepted).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic data, e.g. d=50,N=2000[,sparsity=0.9][,noise=0.09].
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Number of curvature pairs kept per worker.
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// Initial estimate scale, or "auto".
    #[arg(long)]
    gamma0: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// constant:L, uniform:LO,HI, per-worker:L1,.., heterogeneous:BASE,SPREAD,
    /// bounded:D or scripted:I1,..
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_updates: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    subopt_tol: Option<f64>,
    /// Output directory (the LDQN_OUTPUT_DIR environment variable wins).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip min-max feature scaling.
    #[arg(long)]
    no_normalize: bool,
    /// Extra key=value settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Suboptimality tolerance for the time-to-tolerance table.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Write epoch.csv and time.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace files, optionally as NAME=PATH.
    #[arg(required = true)]
    traces: Vec<String>,
}

fn build_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut pairs: Vec<(&str, String)> = Vec::new();
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k, v));
        }
    };
    push("solver", args.solver.clone());
    push("data", args.data.as_ref().map(|p| p.display().to_string()));
    push("synthetic", args.synthetic.clone());
    push("workers", args.workers.map(|v| v.to_string()));
    push("memory", args.memory.map(|v| v.to_string()));
    push("eta", args.eta.map(|v| v.to_string()));
    push("gamma0", args.gamma0.clone());
    push("lambda", args.lambda.map(|v| v.to_string()));
    push("delay", args.delay.clone());
    push("seed", args.seed.map(|v| v.to_string()));
    push("max_updates", args.max_updates.map(|v| v.to_string()));
    push("max_epochs", args.max_epochs.map(|v| v.to_string()));
    push("grad_tol", args.grad_tol.map(|v| v.to_string()));
    push("subopt_tol", args.subopt_tol.map(|v| v.to_string()));
    push("output_dir", args.out.as_ref().map(|p| p.display().to_string()));
    if args.no_normalize {
        push("normalize", Some("false".into()));
    }
    for (k, v) in pairs {
        cfg.set(k, &v)?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set {kv}: expected KEY=VALUE")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let dir = run_experiment(&cfg)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let mut traces = Vec::new();
    for spec in &args.traces {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        let text = std::fs::read_to_string(&path)?;
        traces.push((name, Trace::parse_csv(&text)?));
    }
    let cmp = compare_runs(&traces, args.tol)?;
    print!("{}", cmp.summary());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("epoch.csv"), cmp.epoch_csv())?;
        std::fs::write(dir.join("time.csv"), cmp.time_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_cmd(args),
        Command::Compare(args) => compare_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
