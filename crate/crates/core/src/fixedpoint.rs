//! Adaptive target simulation: solve with an adaptive compute grid while
//! keeping only the target-grid representation in memory.
//!
//! Each accepted step's backward conditional is merged into a running
//! conditional `p(𝔲(a) | 𝔲(t))` anchored at the most recent target `a`, so the
//! live state is O(1) in the number of compute steps. Targets that fall
//! between compute points are handled by interpolating predictions; they
//! never shorten a step, so the compute grid equals that of a plain
//! adaptive solve.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian::{marginalize, merge_conditionals, sample, AffineConditional, GaussianState};
use crate::prior::StateStack;
use crate::problem::OdeProblem;
use crate::stepping::{predict, SolveStats, Solver, SolverConfig};

/// Loop state of the two-target recursion.
#[derive(Clone, Debug)]
pub struct FixedPointCarry {
    /// Most recent target.
    pub a: f64,
    pub p_a: GaussianState,
    /// Most recent compute point, `t ≥ a`.
    pub t: f64,
    /// Filtering marginal at `t`.
    pub p_t: GaussianState,
    /// `p(𝔲(a) | 𝔲(t))`.
    pub accum: AffineConditional,
    /// Step-size proposal for the next step.
    pub dt: f64,
    /// Output scale of the step that ended at `t`.
    pub output_scale: f64,
}

impl FixedPointCarry {
    /// Carry at the initial time: `a = t = t0` and an identity accumulator.
    pub fn new(t0: f64, p0: GaussianState, dt: f64) -> Self {
        let accum = AffineConditional::identity(p0.dim(), p0.cols());
        Self {
            a: t0,
            p_a: p0.clone(),
            t: t0,
            p_t: p0,
            accum,
            dt,
            output_scale: 1.0,
        }
    }
}

fn chain(acc: Option<AffineConditional>, next: AffineConditional) -> Result<AffineConditional> {
    match acc {
        None => Ok(next),
        Some(acc) => merge_conditionals(acc, next),
    }
}

/// Advances the carry from its anchor `a` to the target `b`.
///
/// Returns `p(𝔲(a) | 𝔲(b))` and the new carry, which is anchored at `b`
/// (`p_a = p(𝔲(b))`, `accum = p(𝔲(b) | 𝔲(t))`).
pub fn solve_two_targets(
    solver: &mut Solver,
    carry: FixedPointCarry,
    b: f64,
) -> Result<(AffineConditional, FixedPointCarry)> {
    if !(b > carry.a) {
        return Err(invalid(format!("target {b} must exceed the anchor {}", carry.a)));
    }
    if b > solver.problem().t_end {
        return Err(invalid(format!("target {b} lies beyond t_end")));
    }
    let stack = solver.stack().clone();

    if b < carry.t {
        // Interpolate between the anchor and the current compute point.
        let (p_b, left) = predict(&stack, &carry.p_a, b - carry.a, carry.output_scale)?;
        let (_, right) = predict(&stack, &p_b, carry.t - b, carry.output_scale)?;
        return Ok((
            left,
            FixedPointCarry {
                a: b,
                p_a: p_b,
                accum: right,
                ..carry
            },
        ));
    }

    if b == carry.t {
        let identity = AffineConditional::identity(carry.p_t.dim(), carry.p_t.cols());
        return Ok((
            carry.accum,
            FixedPointCarry {
                a: b,
                p_a: carry.p_t.clone(),
                accum: identity,
                ..carry
            },
        ));
    }

    let FixedPointCarry {
        accum,
        mut t,
        mut p_t,
        mut dt,
        mut output_scale,
        ..
    } = carry;
    // The newest backward conditional is held back one step: if the last
    // step overshoots b, it is replaced by the conditional from t_prev to b.
    let mut acc: Option<AffineConditional> = None;
    let mut pending = accum;
    let mut t_prev = t;
    let mut p_prev = p_t.clone();
    while t < b {
        let (step, dt_next) = solver.step(&p_t, t, dt)?;
        acc = Some(chain(acc, pending)?);
        pending = step.backward;
        t_prev = t;
        p_prev = std::mem::replace(&mut p_t, step.marginal);
        t = step.t;
        dt = dt_next;
        output_scale = step.output_scale;
    }

    if t == b {
        let left = chain(acc, pending)?;
        let identity = AffineConditional::identity(p_t.dim(), p_t.cols());
        return Ok((
            left,
            FixedPointCarry {
                a: b,
                p_a: p_t.clone(),
                t,
                p_t,
                accum: identity,
                dt,
                output_scale,
            },
        ));
    }

    let (p_b, back) = predict(&stack, &p_prev, b - t_prev, output_scale)?;
    let left = chain(acc, back)?;
    let (_, right) = predict(&stack, &p_b, t - b, output_scale)?;
    Ok((
        left,
        FixedPointCarry {
            a: b,
            p_a: p_b,
            t,
            p_t,
            accum: right,
            dt,
            output_scale,
        },
    ))
}

/// The O(M) output of adaptive target simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetSolution {
    pub targets: Vec<f64>,
    /// `p(𝔲(s₀) | u₀, 𝔯(s₀) = 0)`.
    pub initial: GaussianState,
    /// `p(𝔲(s_M) | all residuals)`.
    pub terminal: GaussianState,
    /// `conditionals[m − 1] = p(𝔲(s_{m−1}) | 𝔲(s_m), …)` for `m = 1..=M`.
    pub conditionals: Vec<AffineConditional>,
    pub stats: SolveStats,
    #[serde(skip)]
    layout: Option<StateStack>,
}

impl TargetSolution {
    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    /// Compute-grid size `N` (accepted steps).
    pub fn compute_steps(&self) -> usize {
        self.stats.accepted
    }

    /// Exact number of floats in the stored representation.
    pub fn stored_floats(&self) -> usize {
        self.initial.num_floats()
            + self.terminal.num_floats()
            + self
                .conditionals
                .iter()
                .map(AffineConditional::num_floats)
                .sum::<usize>()
    }

    pub fn layout(&self) -> Option<&StateStack> {
        self.layout.as_ref()
    }

    /// Smoothed marginals at every target, in forward time order.
    pub fn marginals(&self) -> Result<Vec<GaussianState>> {
        let mut out = Vec::with_capacity(self.conditionals.len() + 1);
        out.push(self.terminal.clone());
        for cond in self.conditionals.iter().rev() {
            let next = marginalize(cond, out.last().unwrap())?;
            out.push(next);
        }
        out.reverse();
        Ok(out)
    }

    /// Means of `u` (block 0) at every target.
    pub fn u_means(&self) -> Result<Vec<Vec<f64>>> {
        let stack = self.require_layout()?;
        Ok(self
            .marginals()?
            .iter()
            .map(|g| stack.derivative(&g.mean, 0))
            .collect())
    }

    fn require_layout(&self) -> Result<&StateStack> {
        self.layout
            .as_ref()
            .ok_or_else(|| invalid("solution carries no state layout"))
    }

    /// `K` joint posterior samples of `u` at the targets, each
    /// `(M+1) × d`, by ancestral sampling backwards from the terminal
    /// marginal. Deterministic for a given seed; memory is independent of
    /// `K` apart from the returned samples.
    pub fn sample_joint(&self, num_samples: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        if num_samples == 0 {
            return Err(invalid("number of samples must be positive"));
        }
        let stack = self.require_layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = self.terminal.mean.shape();
        let mut noise = move || DMatrix::from_fn(shape.0, shape.1, |_, _| rng.sample_std());
        let mut out = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let mut x = sample(&self.terminal, &noise())?;
            let mut traj = vec![stack.derivative(&x, 0)];
            for cond in self.conditionals.iter().rev() {
                x = sample(&cond.evaluate(&x)?, &noise())?;
                traj.push(stack.derivative(&x, 0));
            }
            traj.reverse();
            out.push(traj);
        }
        Ok(out)
    }
}

trait SampleStd {
    fn sample_std(&mut self) -> f64;
}

impl SampleStd for ChaCha8Rng {
    fn sample_std(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

/// Checks `s₀ < … < s_M` with `s₀ = t0` and `s_M = t_end`.
pub fn validate_targets(problem: &OdeProblem, targets: &[f64]) -> Result<()> {
    if targets.len() < 2 {
        return Err(invalid("need at least two targets"));
    }
    if targets.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("targets must be strictly increasing"));
    }
    if targets[0] != problem.t0 || *targets.last().unwrap() != problem.t_end {
        return Err(invalid(format!(
            "targets must start at t0 = {} and end at t_end = {}",
            problem.t0, problem.t_end
        )));
    }
    Ok(())
}

/// `M + 1` equispaced targets spanning the problem's time domain, with the
/// endpoints exact.
pub fn equispaced_targets(problem: &OdeProblem, m: usize) -> Vec<f64> {
    let m = m.max(1);
    let (a, b) = (problem.t0, problem.t_end);
    let mut out: Vec<f64> = (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
    out[m] = b;
    out
}

/// Adaptive target simulation with a prepared solver (fixed grids, custom
/// initial states and step traces are configured on the solver).
pub fn solve_targets_with(solver: &mut Solver, targets: &[f64]) -> Result<TargetSolution> {
    validate_targets(solver.problem(), targets)?;
    let p0 = solver.initial_state()?;
    let dt0 = solver.initial_dt(&p0);
    let mut carry = FixedPointCarry::new(targets[0], p0.clone(), dt0);
    let mut conditionals = Vec::with_capacity(targets.len() - 1);
    for &b in &targets[1..] {
        let (left, next) = solve_two_targets(solver, carry, b)?;
        conditionals.push(left);
        carry = next;
    }
    Ok(TargetSolution {
        targets: targets.to_vec(),
        initial: p0,
        terminal: carry.p_a,
        conditionals,
        stats: solver.stats().clone(),
        layout: Some(solver.stack().clone()),
    })
}

pub fn solve_targets(
    problem: &OdeProblem,
    targets: &[f64],
    config: &SolverConfig,
) -> Result<TargetSolution> {
    let mut solver = Solver::new(problem, config)?;
    solve_targets_with(&mut solver, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_half_matches_closed_form() {
        let p = problems::logistic().problem.with_span(0.0, 0.5).unwrap();
        let cfg = SolverConfig::new(3).with_tolerances(1e-8, 1e-11);
        let sol = solve_targets(&p, &[0.0, 0.5], &cfg).unwrap();
        let u = sol.u_means().unwrap();
        assert_relative_eq!(u[1][0], 1.0 / (1.0 + (-0.5f64).exp()), epsilon = 1e-6);
    }

    #[test]
    fn single_interval_reduces_to_two_targets() {
        let p = problems::logistic().problem;
        let cfg = SolverConfig::new(2).with_tolerances(1e-5, 1e-8);
        let sol = solve_targets(&p, &[0.0, 10.0], &cfg).unwrap();
        assert_eq!(sol.conditionals.len(), 1);
        let mut solver = Solver::new(&p, &cfg).unwrap();
        let p0 = solver.initial_state().unwrap();
        let dt = solver.initial_dt(&p0);
        let (_, carry) =
            solve_two_targets(&mut solver, FixedPointCarry::new(0.0, p0, dt), 10.0).unwrap();
        assert_eq!(carry.p_a, sol.terminal);
    }

    #[test]
    fn zero_field_gives_dirac_at_zero() {
        let p = problems::affine(
            DMatrix::zeros(2, 2),
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            (0.0, 2.0),
        )
        .unwrap();
        let sol = solve_targets(&p, &[0.0, 0.7, 2.0], &SolverConfig::new(2)).unwrap();
        for g in sol.marginals().unwrap() {
            assert!(g.mean.iter().all(|x| *x == 0.0));
            assert!(g.cov_sqrt.iter().all(|x| *x == 0.0));
        }
        assert!(sol.conditionals.iter().all(|c| c.offset.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn target_equal_to_carry_time_returns_accumulator() {
        let p = problems::logistic().problem;
        let cfg = SolverConfig::new(2);
        let mut solver = Solver::new(&p, &cfg).unwrap();
        let p0 = solver.initial_state().unwrap();
        let mut carry = FixedPointCarry::new(0.0, p0, 0.1);
        carry.t = 1.0;
        let acc = carry.accum.clone();
        let (left, next) = solve_two_targets(&mut solver, carry, 1.0).unwrap();
        assert_eq!(left, acc);
        assert_eq!(next.a, 1.0);
        assert_eq!(next.accum.linear, DMatrix::identity(3, 3));
    }

    #[test]
    fn rejects_bad_targets() {
        let p = problems::logistic().problem;
        let cfg = SolverConfig::new(2);
        assert!(solve_targets(&p, &[0.0, 5.0, 5.0, 10.0], &cfg).is_err());
        assert!(solve_targets(&p, &[0.0, 6.0, 5.0, 10.0], &cfg).is_err());
        assert!(solve_targets(&p, &[1.0, 10.0], &cfg).is_err());
        let mut solver = Solver::new(&p, &cfg).unwrap();
        let p0 = solver.initial_state().unwrap();
        let carry = FixedPointCarry::new(0.0, p0, 0.1);
        assert!(solve_two_targets(&mut solver, carry, 0.0).is_err());
    }

    #[test]
    fn dirac_solution_samples_are_the_mean() {
        let p = problems::affine(
            DMatrix::zeros(1, 1),
            vec![1.0],
            vec![0.0],
            (0.0, 1.0),
        )
        .unwrap();
        let sol = solve_targets(&p, &[0.0, 0.5, 1.0], &SolverConfig::new(1)).unwrap();
        let means = sol.u_means().unwrap();
        for s in sol.sample_joint(3, 7).unwrap() {
            for (a, b) in s.iter().zip(&means) {
                assert_relative_eq!(a[0], b[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = problems::logistic().problem;
        let cfg = SolverConfig::new(2).with_tolerances(1e-3, 1e-6);
        let sol = solve_targets(&p, &[0.0, 2.5, 5.0, 10.0], &cfg).unwrap();
        assert_eq!(sol.sample_joint(4, 11).unwrap(), sol.sample_joint(4, 11).unwrap());
        assert_ne!(sol.sample_joint(4, 11).unwrap(), sol.sample_joint(4, 12).unwrap());
    }
}
