//! Benchmark runners and machine-readable records: work-precision, memory
//! scaling, step counts on adaptive versus fixed grids, and posterior
//! sampling throughput.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fixedpoint::{equispaced_targets, solve_targets_with, TargetSolution};
use crate::gaussian::triangular_len;
use crate::linearize::Linearization;
use crate::oracle::{merge_grids, solve_and_interpolate, solve_store_everything};
use crate::prior::{Factorization, StateStack};
use crate::problems::{self, BenchmarkProblem};
use crate::rk::{self, RkConfig, Tableau};
use crate::stepping::{Solver, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverId {
    /// Adaptive target simulation.
    Ats,
    /// Store everything, smooth, interpolate.
    AsOracle,
    Rk(Tableau),
}

impl SolverId {
    pub fn id(&self) -> &'static str {
        match self {
            SolverId::Ats => "ats",
            SolverId::AsOracle => "as-oracle",
            SolverId::Rk(t) => t.id(),
        }
    }

    fn is_probabilistic(&self) -> bool {
        !matches!(self, SolverId::Rk(_))
    }
}

impl FromStr for SolverId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ats" => Ok(SolverId::Ats),
            "as-oracle" => Ok(SolverId::AsOracle),
            "rk-bosh3" => Ok(SolverId::Rk(Tableau::Bosh3)),
            "rk-dopri5" => Ok(SolverId::Rk(Tableau::Dopri5)),
            _ => Err(invalid(format!("unknown solver '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Diverged,
    SkippedBudget,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Diverged => "diverged",
            Status::SkippedBudget => "skipped-budget",
        }
    }
}

/// One row of benchmark output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub problem: String,
    pub solver: String,
    /// Distinguishes runs of one solver within a study (e.g. grid choice).
    pub variant: String,
    pub num_derivatives: Option<usize>,
    pub linearization: Option<Linearization>,
    pub factorization: Option<Factorization>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Number of target intervals `M`.
    pub targets: usize,
    /// Compute-grid size `N`.
    pub compute_steps: usize,
    pub rmse: Option<f64>,
    pub wall_time_seconds: f64,
    pub stored_floats: usize,
    pub samples: Option<usize>,
    /// Estimated floats of a store-everything run (memory study).
    pub as_estimate: Option<usize>,
    pub status: Status,
    /// Resolved configuration as JSON.
    pub config: String,
}

/// CSV header, in field order.
pub const RECORD_FIELDS: [&str; 17] = [
    "problem",
    "solver",
    "variant",
    "num_derivatives",
    "linearization",
    "factorization",
    "rel_tol",
    "abs_tol",
    "targets",
    "compute_steps",
    "rmse",
    "wall_time_seconds",
    "stored_floats",
    "samples",
    "as_estimate",
    "status",
    "config",
];

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(String::new, T::to_string)
}

impl BenchmarkRecord {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.problem.clone(),
            self.solver.clone(),
            self.variant.clone(),
            opt(&self.num_derivatives),
            opt(&self.linearization),
            self.factorization
                .map_or_else(String::new, |f| format!("{f:?}").to_lowercase()),
            format_float(self.rel_tol),
            format_float(self.abs_tol),
            self.targets.to_string(),
            self.compute_steps.to_string(),
            self.rmse.map_or_else(String::new, format_float),
            format_float(self.wall_time_seconds),
            self.stored_floats.to_string(),
            opt(&self.samples),
            opt(&self.as_estimate),
            self.status.as_str().to_string(),
            self.config.clone(),
        ]
    }
}

pub fn write_csv<W: Write>(records: &[BenchmarkRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_FIELDS)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[BenchmarkRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records)?;
    Ok(())
}

/// Root-mean-square error over all targets and coordinates.
pub fn rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            sum += (p - q).powi(2);
            n += 1;
        }
    }
    (sum / n.max(1) as f64).sqrt()
}

/// Parses `"1e-3..1e-10"` (every decade in between, inclusive) or a comma
/// separated list.
pub fn parse_tolerances(s: &str) -> Result<Vec<f64>> {
    let parse = |x: &str| -> Result<f64> {
        x.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("not a number: '{x}'")))
    };
    let tols = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse(a)?, parse(b)?);
        if !(a > 0.0 && b > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        let (ea, eb) = (a.log10().round() as i32, b.log10().round() as i32);
        let step = if eb >= ea { 1 } else { -1 };
        let mut out = vec![];
        let mut e = ea;
        loop {
            out.push(10f64.powi(e));
            if e == eb {
                break;
            }
            e += step;
        }
        out
    } else {
        s.split(',').map(parse).collect::<Result<Vec<_>>>()?
    };
    if tols.is_empty() || tols.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("tolerances must be positive"));
    }
    Ok(tols)
}

/// Comma-separated list of positive integers.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("not a positive integer: '{x}'")))
        })
        .collect()
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    solver: Option<&'a SolverConfig>,
    rk: Option<&'a RkConfig>,
    reference: String,
    seed: u64,
    abs_tol_ratio: Option<f64>,
    budget_bytes: Option<f64>,
}

fn metadata(
    bp: &BenchmarkProblem,
    solver: Option<&SolverConfig>,
    rk: Option<&RkConfig>,
    seed: u64,
    budget_bytes: Option<f64>,
) -> String {
    let (rel, abs) = solver
        .map(|c| (c.rel_tol, c.abs_tol))
        .or(rk.map(|c| (c.rel_tol, c.abs_tol)))
        .unwrap_or((1.0, 1.0));
    serde_json::to_string(&RunMetadata {
        solver,
        rk,
        reference: bp.reference.id(),
        seed,
        abs_tol_ratio: Some(abs / rel),
        budget_bytes,
    })
    .unwrap_or_default()
}

/// Result of a single timed solve.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// `u` means at the targets.
    pub means: Vec<Vec<f64>>,
    pub compute_steps: usize,
    pub stored_floats: usize,
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::StepDiverged { .. } | Error::StepSizeUnderflow { .. } | Error::MaxStepsExceeded(_)
    )
}

/// Solves `bp` with one solver and returns target means and storage.
pub fn run_solver(
    bp: &BenchmarkProblem,
    solver: SolverId,
    cfg: &SolverConfig,
    targets: &[f64],
) -> Result<RunOutcome> {
    match solver {
        SolverId::Ats => {
            let sol = solve_targets_with(&mut Solver::new(&bp.problem, cfg)?, targets)?;
            Ok(RunOutcome {
                means: sol.u_means()?,
                compute_steps: sol.compute_steps(),
                stored_floats: sol.stored_floats(),
            })
        }
        SolverId::AsOracle => {
            let mut s = Solver::new(&bp.problem, cfg)?;
            let (grid, marginals) = solve_and_interpolate(&mut s, targets)?;
            Ok(RunOutcome {
                means: marginals
                    .iter()
                    .map(|g| grid.stack().derivative(&g.mean, 0))
                    .collect(),
                compute_steps: grid.compute_steps(),
                stored_floats: grid.stored_floats(),
            })
        }
        SolverId::Rk(tableau) => {
            let rk_cfg = RkConfig::new(tableau, cfg.rel_tol, cfg.abs_tol);
            let sol = rk::solve_problem(&bp.problem, targets, &rk_cfg)?;
            Ok(RunOutcome {
                stored_floats: sol.values.len() * bp.problem.dim * bp.problem.order,
                means: sol.values,
                compute_steps: sol.accepted,
            })
        }
    }
}

/// Options shared by the runners.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub num_derivatives: Option<usize>,
    pub linearization: Option<Linearization>,
    pub factorization: Option<Factorization>,
    pub abs_tol_ratio: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub budget_bytes: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            num_derivatives: None,
            linearization: None,
            factorization: None,
            abs_tol_ratio: 1e-3,
            repetitions: 3,
            seed: 0,
            budget_bytes: 4e9,
        }
    }
}

impl RunOptions {
    /// The problem's recommended configuration with overrides applied.
    pub fn config(&self, bp: &BenchmarkProblem, rel_tol: f64) -> SolverConfig {
        let mut cfg = bp.config();
        if let Some(l) = self.num_derivatives {
            cfg = SolverConfig {
                num_derivatives: l,
                controller: crate::stepping::ControllerConfig::for_order(l),
                ..cfg
            };
        }
        if let Some(lin) = self.linearization {
            cfg.linearization = lin;
        }
        if let Some(f) = self.factorization {
            cfg.factorization = f;
        }
        cfg.with_tolerances(rel_tol, rel_tol * self.abs_tol_ratio)
    }
}

fn base_record(
    bp: &BenchmarkProblem,
    solver: SolverId,
    variant: &str,
    cfg: &SolverConfig,
    m: usize,
    seed: u64,
) -> BenchmarkRecord {
    let prob = solver.is_probabilistic();
    let rk_cfg = match solver {
        SolverId::Rk(t) => Some(RkConfig::new(t, cfg.rel_tol, cfg.abs_tol)),
        _ => None,
    };
    BenchmarkRecord {
        problem: bp.name.clone(),
        solver: solver.id().into(),
        variant: variant.into(),
        num_derivatives: prob.then_some(cfg.num_derivatives),
        linearization: prob.then_some(cfg.linearization),
        factorization: prob.then_some(cfg.factorization),
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        targets: m,
        compute_steps: 0,
        rmse: None,
        wall_time_seconds: 0.0,
        stored_floats: 0,
        samples: None,
        as_estimate: None,
        status: Status::Ok,
        config: metadata(
            bp,
            prob.then_some(cfg),
            rk_cfg.as_ref(),
            seed,
            None,
        ),
    }
}

/// Work-precision study: one record per `(solver, tolerance)`, wall time is
/// the best of `repetitions` runs.
pub fn run_workprecision(
    bp: &BenchmarkProblem,
    solvers: &[SolverId],
    tolerances: &[f64],
    m: usize,
    opts: &RunOptions,
) -> Result<Vec<BenchmarkRecord>> {
    let targets = equispaced_targets(&bp.problem, m);
    let reference = bp.reference(&targets)?;
    let mut out = Vec::new();
    for &solver in solvers {
        for &tol in tolerances {
            let cfg = opts.config(bp, tol);
            let mut rec = base_record(bp, solver, "adaptive", &cfg, m, opts.seed);
            let mut best = f64::INFINITY;
            for _ in 0..opts.repetitions.max(1) {
                let start = Instant::now();
                match run_solver(bp, solver, &cfg, &targets) {
                    Ok(run) => {
                        best = best.min(start.elapsed().as_secs_f64());
                        rec.compute_steps = run.compute_steps;
                        rec.stored_floats = run.stored_floats;
                        rec.rmse = Some(rmse(&run.means, &reference));
                    }
                    Err(e) if is_divergence(&e) => {
                        rec.status = Status::Diverged;
                        best = best.min(start.elapsed().as_secs_f64());
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            rec.wall_time_seconds = best;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Floats a store-everything run keeps per compute step: time, output
/// scale, one marginal and one backward conditional.
pub fn floats_per_step(stack: &StateStack) -> usize {
    let (d, c) = (stack.state_dim(), stack.mean_cols());
    let tri = triangular_len(d);
    2 + (d * c + tri) + (d * d + d * c + tri)
}

/// Memory-versus-dimension study on the Brusselator.
///
/// The store-everything footprint is estimated from a terminal-value solve
/// (step count times per-step storage) and the run itself is only attempted
/// when the estimate fits into `opts.budget_bytes`.
pub fn run_memory_scaling(
    d_grid: &[usize],
    m: usize,
    tol: f64,
    opts: &RunOptions,
) -> Result<Vec<BenchmarkRecord>> {
    let mut out = Vec::new();
    for &d in d_grid {
        let bp = problems::brusselator(d)?;
        let cfg = opts.config(&bp, tol);
        let targets = equispaced_targets(&bp.problem, m);

        let mut solver = Solver::new(&bp.problem, &cfg)?;
        let terminal = solve_targets_with(&mut solver, &[bp.problem.t0, bp.problem.t_end])?;
        let estimate = terminal.compute_steps() * floats_per_step(solver.stack());

        let mut rec = base_record(&bp, SolverId::Ats, "adaptive", &cfg, m, opts.seed);
        let start = Instant::now();
        let sol = solve_targets_with(&mut Solver::new(&bp.problem, &cfg)?, &targets)?;
        rec.wall_time_seconds = start.elapsed().as_secs_f64();
        rec.compute_steps = sol.compute_steps();
        rec.stored_floats = sol.stored_floats();
        rec.as_estimate = Some(estimate);
        rec.config = metadata(&bp, Some(&cfg), None, opts.seed, Some(opts.budget_bytes));
        out.push(rec);

        let mut rec = base_record(&bp, SolverId::AsOracle, "adaptive", &cfg, m, opts.seed);
        rec.as_estimate = Some(estimate);
        rec.config = metadata(&bp, Some(&cfg), None, opts.seed, Some(opts.budget_bytes));
        if (estimate as f64) * 8.0 > opts.budget_bytes {
            rec.status = Status::SkippedBudget;
        } else {
            let start = Instant::now();
            let run = run_solver(&bp, SolverId::AsOracle, &cfg, &targets)?;
            rec.wall_time_seconds = start.elapsed().as_secs_f64();
            rec.compute_steps = run.compute_steps;
            rec.stored_floats = run.stored_floats;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Joint samples indexed as `[sample][target][coordinate]`.
pub type Samples = Vec<Vec<Vec<f64>>>;

/// Output of the step-count study.
#[derive(Clone, Debug, Serialize)]
pub struct StepCountReport {
    /// Adaptive, fixed grid with the adaptive step count, fixed grid at the
    /// adaptive run's smallest step.
    pub records: Vec<BenchmarkRecord>,
    /// Accepted step sizes of the adaptive run.
    pub dt_trace: Vec<f64>,
}

fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=steps)
        .map(|i| t0 + (t1 - t0) * i as f64 / steps as f64)
        .collect();
    g[steps] = t1;
    g
}

/// Adaptive run versus two fixed grids: one with the same number of steps
/// and one at the smallest adaptive step size. RMSE over `m + 1` targets.
pub fn run_stepcount(
    bp: &BenchmarkProblem,
    cfg: &SolverConfig,
    m: usize,
) -> Result<StepCountReport> {
    let targets = equispaced_targets(&bp.problem, m);
    let reference = bp.reference(&targets)?;
    let (t0, t1) = (bp.problem.t0, bp.problem.t_end);

    let mut solver = Solver::new(&bp.problem, cfg)?.with_step_trace();
    let start = Instant::now();
    let sol = solve_targets_with(&mut solver, &targets)?;
    let mut adaptive = base_record(bp, SolverId::Ats, "adaptive", cfg, m, 0);
    adaptive.wall_time_seconds = start.elapsed().as_secs_f64();
    adaptive.compute_steps = sol.compute_steps();
    adaptive.stored_floats = sol.stored_floats();
    adaptive.rmse = Some(rmse(&sol.u_means()?, &reference));
    let dt_trace = solver.step_trace().unwrap_or_default().to_vec();
    let min_dt = sol.stats.min_dt;

    let n_matched = sol.compute_steps();
    let n_min = ((t1 - t0) / min_dt).ceil() as usize;
    let mut records = vec![adaptive];
    for (variant, steps) in [("fixed-steps", n_matched), ("fixed-min-dt", n_min)] {
        let mut rec = base_record(bp, SolverId::Ats, variant, cfg, m, 0);
        let start = Instant::now();
        let run = Solver::new(&bp.problem, cfg)?
            .with_fixed_grid(uniform_grid(t0, t1, steps))
            .and_then(|mut s| solve_targets_with(&mut s, &targets));
        rec.wall_time_seconds = start.elapsed().as_secs_f64();
        rec.compute_steps = steps;
        match run {
            Ok(sol) => {
                let means = sol.u_means()?;
                let err = rmse(&means, &reference);
                rec.stored_floats = sol.stored_floats();
                if err.is_finite() {
                    rec.rmse = Some(err);
                } else {
                    rec.status = Status::Diverged;
                }
            }
            Err(e) if is_divergence(&e) => rec.status = Status::Diverged,
            Err(e) => return Err(e),
        }
        records.push(rec);
    }
    Ok(StepCountReport { records, dt_trace })
}

/// Pipeline A: adaptive target simulation, then joint samples at the
/// targets. Returns the samples and the solution.
pub fn sampling_pipeline_a(
    bp: &BenchmarkProblem,
    cfg: &SolverConfig,
    targets: &[f64],
    num_samples: usize,
    seed: u64,
) -> Result<(Samples, TargetSolution)> {
    let sol = solve_targets_with(&mut Solver::new(&bp.problem, cfg)?, targets)?;
    let samples = sol.sample_joint(num_samples, seed)?;
    Ok((samples, sol))
}

/// Pipeline B: store-everything adaptive solve, re-solve on the compute grid
/// augmented with the targets, sample jointly over the full grid, and keep
/// the target locations. Returns `None` when the estimated storage exceeds
/// `budget_bytes`; otherwise the samples and the augmented grid size.
pub fn sampling_pipeline_b(
    bp: &BenchmarkProblem,
    cfg: &SolverConfig,
    targets: &[f64],
    num_samples: usize,
    seed: u64,
    budget_bytes: f64,
) -> Result<Option<(Samples, usize)>> {
    let adaptive = solve_store_everything(&mut Solver::new(&bp.problem, cfg)?)?;
    let grid = merge_grids(&adaptive.times, targets);
    drop(adaptive);
    let per_step = floats_per_step(&StateStack::new(
        cfg.num_derivatives,
        bp.problem.dim,
        cfg.factorization,
    )?);
    let estimate = grid.len() * (per_step + num_samples * bp.problem.dim);
    if estimate as f64 * 8.0 > budget_bytes {
        return Ok(None);
    }
    let n = grid.len() - 1;
    let mut solver = Solver::new(&bp.problem, cfg)?.with_fixed_grid(grid)?;
    let full = solve_store_everything(&mut solver)?;
    let idx = full.grid_indices(targets)?;
    let samples = full
        .sample_joint(num_samples, seed)?
        .into_iter()
        .map(|traj| idx.iter().map(|&i| traj[i].clone()).collect())
        .collect();
    Ok(Some((samples, n)))
}

/// Sampling study over tolerances and sample counts, both pipelines.
pub fn run_sampling(
    bp: &BenchmarkProblem,
    tolerances: &[f64],
    sample_counts: &[usize],
    m: usize,
    opts: &RunOptions,
) -> Result<Vec<BenchmarkRecord>> {
    let targets = equispaced_targets(&bp.problem, m);
    let mut out = Vec::new();
    for &tol in tolerances {
        let cfg = opts.config(bp, tol);
        for &k in sample_counts {
            let meta = metadata(bp, Some(&cfg), None, opts.seed, Some(opts.budget_bytes));

            let mut rec = base_record(bp, SolverId::Ats, "pipeline-a", &cfg, m, opts.seed);
            rec.samples = Some(k);
            rec.config = meta.clone();
            let start = Instant::now();
            let (_, sol) = sampling_pipeline_a(bp, &cfg, &targets, k, opts.seed)?;
            rec.wall_time_seconds = start.elapsed().as_secs_f64();
            rec.compute_steps = sol.compute_steps();
            rec.stored_floats = sol.stored_floats();
            out.push(rec);

            let mut rec = base_record(bp, SolverId::AsOracle, "pipeline-b", &cfg, m, opts.seed);
            rec.samples = Some(k);
            rec.config = meta;
            let start = Instant::now();
            match sampling_pipeline_b(bp, &cfg, &targets, k, opts.seed, opts.budget_bytes)? {
                Some((_, n)) => {
                    rec.wall_time_seconds = start.elapsed().as_secs_f64();
                    rec.compute_steps = n;
                }
                None => rec.status = Status::SkippedBudget,
            }
            out.push(rec);
        }
    }
    Ok(out)
}

/// Outcome of one assertion of `--check`.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Number of increases in a sequence that should be decreasing.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Per solver: RMSE decreases with tolerance (at most one inversion), and
/// target-simulation storage is tolerance-independent.
pub fn check_workprecision(records: &[BenchmarkRecord]) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut solvers: Vec<&str> = records.iter().map(|r| r.solver.as_str()).collect();
    solvers.dedup();
    for s in solvers {
        let mut rows: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.solver == s).collect();
        rows.sort_by(|a, b| b.rel_tol.total_cmp(&a.rel_tol));
        let errs: Vec<f64> = rows.iter().map(|r| r.rmse.unwrap_or(f64::INFINITY)).collect();
        let inv = inversions(&errs);
        out.push(CheckResult::new(
            &format!("{s}: rmse decreases with tolerance"),
            inv <= 1 && errs.iter().all(|e| e.is_finite()),
            format!("{inv} inversions over {errs:?}"),
        ));
        if s == "ats" {
            let floats: Vec<usize> = rows.iter().map(|r| r.stored_floats).collect();
            out.push(CheckResult::new(
                "ats: storage independent of tolerance",
                floats.windows(2).all(|w| w[0] == w[1]),
                format!("stored floats {floats:?}"),
            ));
        }
    }
    out
}

/// All runs complete and, at the largest dimension, the store-everything
/// estimate exceeds target-simulation storage by `min_ratio`.
pub fn check_memory(records: &[BenchmarkRecord], min_ratio: f64) -> Vec<CheckResult> {
    let ats: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.solver == "ats").collect();
    let mut out = vec![CheckResult::new(
        "memory: target simulation completes for every dimension",
        !ats.is_empty() && ats.iter().all(|r| r.status == Status::Ok),
        format!("{} runs", ats.len()),
    )];
    if let Some(last) = ats.last() {
        let ratio = last.as_estimate.unwrap_or(0) as f64 / last.stored_floats.max(1) as f64;
        out.push(CheckResult::new(
            "memory: store-everything estimate / target storage at largest dimension",
            ratio >= min_ratio,
            format!("ratio {ratio:.1} (required >= {min_ratio})"),
        ));
    }
    out
}

/// Smallest-step fixed grid has `min_factor`× the adaptive steps; the
/// matched fixed grid diverges or is 10× less accurate.
pub fn check_stepcount(report: &StepCountReport, min_factor: f64) -> Vec<CheckResult> {
    let find = |v: &str| report.records.iter().find(|r| r.variant == v);
    let (Some(a), Some(m), Some(f)) = (find("adaptive"), find("fixed-steps"), find("fixed-min-dt"))
    else {
        return vec![CheckResult::new("stepcount: records present", false, String::new())];
    };
    let factor = f.compute_steps as f64 / a.compute_steps as f64;
    let a_err = a.rmse.unwrap_or(f64::INFINITY);
    let matched_bad = m.status == Status::Diverged || m.rmse.is_some_and(|e| e > 10.0 * a_err);
    vec![
        CheckResult::new(
            "stepcount: smallest-step grid is much larger",
            factor >= min_factor,
            format!("{factor:.1}x (required >= {min_factor}x)"),
        ),
        CheckResult::new(
            "stepcount: matched fixed grid fails",
            matched_bad,
            format!("status {}, rmse {:?} vs adaptive {a_err:e}", m.status.as_str(), m.rmse),
        ),
    ]
}

/// Compute-grid size strictly increases with tightening tolerance and the
/// pipeline-A storage does not depend on the number of samples.
pub fn check_sampling(records: &[BenchmarkRecord]) -> Vec<CheckResult> {
    let a: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.variant == "pipeline-a").collect();
    let mut tols: Vec<f64> = a.iter().map(|r| r.rel_tol).collect();
    tols.sort_by(|x, y| y.total_cmp(x));
    tols.dedup();
    let steps: Vec<usize> = tols
        .iter()
        .filter_map(|t| a.iter().find(|r| r.rel_tol == *t).map(|r| r.compute_steps))
        .collect();
    let storage_ok = tols.iter().all(|t| {
        let f: Vec<usize> = a
            .iter()
            .filter(|r| r.rel_tol == *t)
            .map(|r| r.stored_floats)
            .collect();
        f.windows(2).all(|w| w[0] == w[1])
    });
    vec![
        CheckResult::new(
            "sampling: compute grid grows as tolerance tightens",
            steps.windows(2).all(|w| w[0] < w[1]),
            format!("steps {steps:?} for tolerances {tols:?}"),
        ),
        CheckResult::new(
            "sampling: solution storage independent of sample count",
            storage_ok,
            String::new(),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_ranges() {
        assert_eq!(parse_tolerances("1e-3..1e-5").unwrap(), vec![1e-3, 1e-4, 1e-5]);
        assert_eq!(parse_tolerances("1e-2,1e-4").unwrap(), vec![1e-2, 1e-4]);
        assert_eq!(parse_tolerances("1e-6").unwrap(), vec![1e-6]);
        assert!(parse_tolerances("a..b").is_err());
        assert!(parse_tolerances("-1").is_err());
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = format_float(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_header_matches_field_order() {
        let rec = base_record(
            &problems::logistic(),
            SolverId::Ats,
            "adaptive",
            &SolverConfig::new(2),
            3,
            42,
        );
        let config: serde_json::Value = serde_json::from_str(&rec.config).unwrap();
        assert_eq!(config["seed"], 42);
        let solver: SolverConfig = serde_json::from_value(config["solver"].clone()).unwrap();
        assert_eq!(solver, SolverConfig::new(2));
        let json = serde_json::to_string(&rec).unwrap();
        let mut last = 0;
        for f in RECORD_FIELDS {
            let pos = json.find(&format!("\"{f}\":")).unwrap();
            assert!(pos >= last, "{f} out of order");
            last = pos;
        }
        assert_eq!(rec.csv_row().len(), RECORD_FIELDS.len());
    }

    #[test]
    fn workprecision_on_logistic() {
        let bp = problems::logistic();
        let opts = RunOptions {
            repetitions: 1,
            ..Default::default()
        };
        let recs = run_workprecision(
            &bp,
            &[SolverId::Ats, SolverId::Rk(Tableau::Dopri5)],
            &[1e-8],
            5,
            &opts,
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].rmse.unwrap() <= 1e-6);
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&RECORD_FIELDS.join(",")));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
        assert_eq!(inversions(&[3.0, 4.0, 1.0]), 1);
    }

    #[test]
    fn solver_ids_round_trip() {
        for s in ["ats", "as-oracle", "rk-bosh3", "rk-dopri5"] {
            assert_eq!(s.parse::<SolverId>().unwrap().id(), s);
        }
        assert!("euler".parse::<SolverId>().is_err());
    }
}
