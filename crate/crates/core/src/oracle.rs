//! Adaptive simulation: store every compute-grid point, smooth, then
//! interpolate at the targets. O(N) memory; kept as the comparison target for
//! adaptive target simulation.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::fixedpoint::validate_targets;
use crate::gaussian::{marginalize, sample, AffineConditional, GaussianState};
use crate::prior::StateStack;
use crate::stepping::{predict, SolveStats, Solver};

/// Filtering solution on the full compute grid.
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub times: Vec<f64>,
    pub filtered: Vec<GaussianState>,
    /// `backward[k] = p(𝔲(t_k) | 𝔲(t_{k+1}))`.
    pub backward: Vec<AffineConditional>,
    /// Output scale of step `k → k+1`.
    pub output_scales: Vec<f64>,
    pub stats: SolveStats,
    stack: StateStack,
}

/// Runs the solver to `t_end`, keeping everything.
pub fn solve_store_everything(solver: &mut Solver) -> Result<GridSolution> {
    let p0 = solver.initial_state()?;
    let mut dt = solver.initial_dt(&p0);
    let t_end = solver.problem().t_end;
    let mut t = solver.problem().t0;
    let mut times = vec![t];
    let mut filtered = vec![p0];
    let mut backward = Vec::new();
    let mut output_scales = Vec::new();
    while t < t_end {
        let (step, dt_next) = solver.step(filtered.last().unwrap(), t, dt)?;
        t = step.t;
        dt = dt_next;
        times.push(t);
        filtered.push(step.marginal);
        backward.push(step.backward);
        output_scales.push(step.output_scale);
    }
    Ok(GridSolution {
        times,
        filtered,
        backward,
        output_scales,
        stats: solver.stats().clone(),
        stack: solver.stack().clone(),
    })
}

impl GridSolution {
    pub fn stack(&self) -> &StateStack {
        &self.stack
    }

    pub fn compute_steps(&self) -> usize {
        self.backward.len()
    }

    /// Floats stored per compute step: one marginal and one conditional.
    pub fn floats_per_step(&self) -> usize {
        self.filtered[0].num_floats() + self.backward.first().map_or(0, |b| b.num_floats())
    }

    pub fn stored_floats(&self) -> usize {
        self.times.len()
            + self.output_scales.len()
            + self.filtered.iter().map(GaussianState::num_floats).sum::<usize>()
            + self
                .backward
                .iter()
                .map(AffineConditional::num_floats)
                .sum::<usize>()
    }

    /// Smoothing marginals on the compute grid.
    pub fn smoothed(&self) -> Result<Vec<GaussianState>> {
        let mut out = vec![self.filtered.last().unwrap().clone()];
        for cond in self.backward.iter().rev() {
            let next = marginalize(cond, out.last().unwrap())?;
            out.push(next);
        }
        out.reverse();
        Ok(out)
    }

    /// Smoothing marginals at arbitrary times inside the grid.
    pub fn interpolate(&self, smoothed: &[GaussianState], at: &[f64]) -> Result<Vec<GaussianState>> {
        let first = self.times[0];
        let last = *self.times.last().unwrap();
        at.iter()
            .map(|&s| {
                if !(s >= first && s <= last) {
                    return Err(invalid(format!("time {s} outside [{first}, {last}]")));
                }
                let k = self.times.partition_point(|t| *t <= s) - 1;
                if self.times[k] == s {
                    return Ok(smoothed[k].clone());
                }
                let scale = self.output_scales[k];
                let (p_s, _) = predict(&self.stack, &self.filtered[k], s - self.times[k], scale)?;
                let (_, back) = predict(&self.stack, &p_s, self.times[k + 1] - s, scale)?;
                marginalize(&back, &smoothed[k + 1])
            })
            .collect()
    }

    /// Smoothed marginals at a validated target grid.
    pub fn target_marginals(&self, targets: &[f64]) -> Result<Vec<GaussianState>> {
        let smoothed = self.smoothed()?;
        self.interpolate(&smoothed, targets)
    }

    /// Joint samples of `u` over the whole compute grid, `(N+1) × d` each.
    pub fn sample_joint(&self, num_samples: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        if num_samples == 0 {
            return Err(invalid("number of samples must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terminal = self.filtered.last().unwrap();
        let (r, c) = terminal.mean.shape();
        let mut out = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let mut noise =
                || DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
            let mut x = sample(terminal, &noise())?;
            let mut traj = vec![self.stack.derivative(&x, 0)];
            for cond in self.backward.iter().rev() {
                x = sample(&cond.evaluate(&x)?, &noise())?;
                traj.push(self.stack.derivative(&x, 0));
            }
            traj.reverse();
            out.push(traj);
        }
        Ok(out)
    }

    /// Indices of `targets` on the compute grid; every target must be a grid
    /// point.
    pub fn grid_indices(&self, targets: &[f64]) -> Result<Vec<usize>> {
        targets
            .iter()
            .map(|s| {
                self.times
                    .binary_search_by(|t| t.total_cmp(s))
                    .map_err(|_| invalid(format!("target {s} is not a grid point")))
            })
            .collect()
    }
}

/// Adaptive simulation plus smoothing plus interpolation at `targets`.
pub fn solve_and_interpolate(
    solver: &mut Solver,
    targets: &[f64],
) -> Result<(GridSolution, Vec<GaussianState>)> {
    validate_targets(solver.problem(), targets)?;
    let grid = solve_store_everything(solver)?;
    let marginals = grid.target_marginals(targets)?;
    Ok((grid, marginals))
}

/// Union of two sorted grids without duplicates.
pub fn merge_grids(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a.iter().chain(b).copied().collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}
