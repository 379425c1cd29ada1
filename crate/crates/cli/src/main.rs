use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use probode::harness::{self, BenchmarkRecord, CheckResult, RunOptions, SolverId};
use probode::problems;
use probode::{equispaced_targets, solve_targets_with, Factorization, Linearization, Solver};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "probode", version, about = "Probabilistic ODE solvers with target simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and report marginals at equispaced targets.
    Solve(SolveArgs),
    /// Run a benchmark study.
    #[command(subcommand)]
    Bench(Bench),
}

#[derive(Subcommand)]
enum Bench {
    /// Error versus wall time over a tolerance sweep.
    Workprecision(WorkPrecisionArgs),
    /// Storage versus Brusselator dimension.
    Memory(MemoryArgs),
    /// Adaptive versus fixed step grids.
    Stepcount(StepCountArgs),
    /// Joint posterior sampling at the targets.
    Sampling(SamplingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "logistic")]
    problem: String,
    /// Brusselator grid points.
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Number of target intervals; targets are M + 1 equispaced points.
    #[arg(long, default_value_t = 5)]
    targets: usize,
    #[arg(long)]
    num_derivatives: Option<usize>,
    #[arg(long)]
    linearization: Option<Linearization>,
    #[arg(long)]
    factorization: Option<Factorization>,
    /// Absolute tolerance as a multiple of the relative one.
    #[arg(long, default_value_t = 1e-3)]
    abs_tol_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            num_derivatives: self.num_derivatives,
            linearization: self.linearization,
            factorization: self.factorization,
            abs_tol_ratio: self.abs_tol_ratio,
            seed: self.seed,
            ..RunOptions::default()
        }
    }

    fn writer(&self) -> anyhow::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct WorkPrecisionArgs {
    #[command(flatten)]
    common: Common,
    /// A decade range like `1e-3..1e-10` or a comma-separated list.
    #[arg(long, default_value = "1e-3..1e-8")]
    tols: String,
    /// Comma-separated solver ids.
    #[arg(long, default_value = "ats,as-oracle,rk-bosh3,rk-dopri5")]
    solvers: String,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct MemoryArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated Brusselator dimensions.
    #[arg(long, default_value = "2,4,8,16,32,64")]
    dims: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 4e9)]
    budget_bytes: f64,
    /// Required store-everything / target storage ratio for `--check`.
    #[arg(long, default_value_t = 1e3)]
    min_ratio: f64,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct StepCountArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Writes the adaptive step sizes, one per line.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SamplingArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "1e-4,1e-7,1e-10")]
    tols: String,
    /// Comma-separated sample counts.
    #[arg(long, default_value = "1,10,100,500")]
    samples: String,
    #[arg(long, default_value_t = 4e9)]
    budget_bytes: f64,
    #[arg(long)]
    check: bool,
}

#[derive(Serialize)]
struct SolveOutput {
    problem: String,
    rel_tol: f64,
    abs_tol: f64,
    targets: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<Vec<f64>>,
    compute_steps: usize,
    stored_floats: usize,
    wall_time_seconds: f64,
    config: probode::SolverConfig,
    stats: probode::SolveStats,
}

fn solve(args: &SolveArgs) -> anyhow::Result<()> {
    let c = &args.common;
    let bp = problems::by_name(&c.problem, c.d)?;
    let cfg = c.options().config(&bp, args.tol);
    let targets = equispaced_targets(&bp.problem, c.targets);
    let start = Instant::now();
    let mut solver = Solver::new(&bp.problem, &cfg)?;
    let sol = solve_targets_with(&mut solver, &targets)?;
    let wall = start.elapsed().as_secs_f64();
    let stack = solver.stack();
    let marginals = sol.marginals()?;
    let out = SolveOutput {
        problem: bp.name.clone(),
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        means: marginals.iter().map(|g| stack.derivative(&g.mean, 0)).collect(),
        stds: marginals.iter().map(|g| stack.u_std(g)).collect(),
        targets,
        compute_steps: sol.compute_steps(),
        stored_floats: sol.stored_floats(),
        wall_time_seconds: wall,
        stats: sol.stats.clone(),
        config: cfg,
    };
    let mut w = c.writer()?;
    match c.format {
        Format::Json => serde_json::to_writer_pretty(&mut w, &out)?,
        Format::Csv => {
            let d = out.means.first().map_or(0, Vec::len);
            let header: Vec<String> = std::iter::once("t".to_string())
                .chain((0..d).map(|i| format!("mean_{i}")))
                .chain((0..d).map(|i| format!("std_{i}")))
                .collect();
            writeln!(w, "{}", header.join(","))?;
            for ((t, m), s) in out.targets.iter().zip(&out.means).zip(&out.stds) {
                let row: Vec<String> = std::iter::once(*t)
                    .chain(m.iter().copied())
                    .chain(s.iter().copied())
                    .map(harness::format_float)
                    .collect();
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn emit(common: &Common, records: &[BenchmarkRecord]) -> anyhow::Result<()> {
    let mut w = common.writer()?;
    match common.format {
        Format::Csv => harness::write_csv(records, &mut w)?,
        Format::Json => {
            harness::write_json(records, &mut w)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Prints check results to stderr; returns whether all passed.
fn report(checks: &[CheckResult]) -> bool {
    for c in checks {
        eprintln!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    checks.iter().all(|c| c.passed)
}

fn bench(cmd: &Bench) -> anyhow::Result<bool> {
    Ok(match cmd {
        Bench::Workprecision(a) => {
            let bp = problems::by_name(&a.common.problem, a.common.d)?;
            let tols = harness::parse_tolerances(&a.tols)?;
            let solvers = a
                .solvers
                .split(',')
                .map(|s| s.trim().parse::<SolverId>())
                .collect::<Result<Vec<_>, _>>()?;
            let opts = RunOptions {
                repetitions: a.repetitions,
                ..a.common.options()
            };
            let recs = harness::run_workprecision(&bp, &solvers, &tols, a.common.targets, &opts)?;
            emit(&a.common, &recs)?;
            !a.check || report(&harness::check_workprecision(&recs))
        }
        Bench::Memory(a) => {
            let dims = harness::parse_usize_list(&a.dims)?;
            let opts = RunOptions {
                budget_bytes: a.budget_bytes,
                ..a.common.options()
            };
            let recs = harness::run_memory_scaling(&dims, a.common.targets, a.tol, &opts)?;
            emit(&a.common, &recs)?;
            !a.check || report(&harness::check_memory(&recs, a.min_ratio))
        }
        Bench::Stepcount(a) => {
            let bp = problems::by_name(&a.common.problem, a.common.d)?;
            let cfg = a.common.options().config(&bp, a.tol);
            let rep = harness::run_stepcount(&bp, &cfg, a.common.targets)?;
            emit(&a.common, &rep.records)?;
            if let Some(p) = &a.trace_out {
                let mut w = BufWriter::new(File::create(p)?);
                for dt in &rep.dt_trace {
                    writeln!(w, "{}", harness::format_float(*dt))?;
                }
                w.flush()?;
            }
            !a.check || report(&harness::check_stepcount(&rep, 50.0))
        }
        Bench::Sampling(a) => {
            let bp = problems::by_name(&a.common.problem, a.common.d)?;
            let tols = harness::parse_tolerances(&a.tols)?;
            let ks = harness::parse_usize_list(&a.samples)?;
            let opts = RunOptions {
                budget_bytes: a.budget_bytes,
                ..a.common.options()
            };
            let recs = harness::run_sampling(&bp, &tols, &ks, a.common.targets, &opts)?;
            emit(&a.common, &recs)?;
            !a.check || report(&harness::check_sampling(&recs))
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a).map(|()| true),
        Command::Bench(b) => bench(b),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<probode::Error>(),
                Some(probode::Error::InvalidArgument(_) | probode::Error::UnsupportedProblem(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
