//! One adaptive forward step: predict, linearize, calibrate, estimate the
//! local error, update, and propose the next step size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    condition_affine, joint_qr, qr_upper, solve_upper_transposed, AffineConditional,
    GaussianState,
};
use crate::linearize::{linearize, Linearization};
use crate::prior::{taylor_init, Factorization, StateStack};
use crate::problem::OdeProblem;

/// PI step-size controller constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Exponent on the current error.
    pub alpha: f64,
    /// Exponent on the previous accepted error.
    pub beta: f64,
}

impl ControllerConfig {
    /// Defaults for an error that scales like `dt^(order+1)`.
    pub fn for_order(order: usize) -> Self {
        let q = (order + 1) as f64;
        Self {
            safety: 0.95,
            min_factor: 0.1,
            max_factor: 10.0,
            alpha: 0.7 / q,
            beta: 0.4 / q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(invalid("controller safety must lie in (0, 1]"));
        }
        if !(self.min_factor > 0.0 && self.min_factor < 1.0 && self.max_factor > 1.0) {
            return Err(invalid("controller factors must satisfy 0 < min < 1 < max"));
        }
        if !(self.alpha > 0.0 && self.beta >= 0.0) {
            return Err(invalid("controller exponents must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// Per-step quasi-maximum-likelihood output scale.
    TimeVarying,
    /// Unit output scale.
    None,
}

/// Resolved solver configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub num_derivatives: usize,
    pub linearization: Linearization,
    pub factorization: Factorization,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub controller: ControllerConfig,
    pub calibration: Calibration,
    /// Overrides the initial step-size heuristic.
    pub initial_dt: Option<f64>,
    pub max_steps: usize,
}

impl SolverConfig {
    pub fn new(num_derivatives: usize) -> Self {
        Self {
            num_derivatives,
            linearization: Linearization::Ek0,
            factorization: Factorization::Dense,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            controller: ControllerConfig::for_order(num_derivatives),
            calibration: Calibration::TimeVarying,
            initial_dt: None,
            max_steps: 10_000_000,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_linearization(mut self, linearization: Linearization) -> Self {
        self.linearization = linearization;
        self
    }

    pub fn with_factorization(mut self, factorization: Factorization) -> Self {
        self.factorization = factorization;
        self
    }

    pub fn with_calibration(mut self, calibration: Calibration) -> Self {
        self.calibration = calibration;
        self
    }

    pub fn with_initial_dt(mut self, dt: f64) -> Self {
        self.initial_dt = Some(dt);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if let Some(dt) = self.initial_dt {
            if !(dt > 0.0) {
                return Err(invalid("initial step size must be positive"));
            }
        }
        self.controller.validate()
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

fn scale_cols(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// Prediction through `x' = Φ x + w`, `w ~ N(0, √Q √Qᵀ)`, returning the
/// extrapolated marginal and the backward conditional `p(x | x')`.
///
/// One QR decomposition of `[[Lᵀ Φᵀ, Lᵀ], [√Qᵀ, 0]]` yields both; the gain is
/// obtained by a triangular solve.
pub fn predict_affine(
    g: &GaussianState,
    phi: &DMatrix<f64>,
    q_sqrt: &DMatrix<f64>,
) -> Result<(GaussianState, AffineConditional)> {
    let d = g.dim();
    if phi.shape() != (d, d) || q_sqrt.shape() != (d, d) {
        return Err(invalid("transition does not match the state dimension"));
    }
    let lt = g.cov_sqrt.transpose();
    let f = joint_qr(&(&lt * phi.transpose()), &lt, Some(&q_sqrt.transpose()));
    let mean = phi * &g.mean;
    let gain = f.gain_t.transpose();
    let offset = &g.mean - &gain * &mean;
    Ok((
        GaussianState {
            mean,
            cov_sqrt: f.r1.transpose(),
        },
        AffineConditional {
            linear: gain,
            offset,
            noise_sqrt: f.r2.transpose(),
        },
    ))
}

/// Prior prediction over `dt` with diffusion scaled by `output_scale`.
///
/// Runs in preconditioned coordinates `x̄ = T(dt)⁻¹ x`, where the transition is
/// step-size independent, and maps the results back.
pub fn predict(
    stack: &StateStack,
    g: &GaussianState,
    dt: f64,
    output_scale: f64,
) -> Result<(GaussianState, AffineConditional)> {
    if !(dt > 0.0) {
        return Err(invalid(format!("prediction needs dt > 0, got {dt}")));
    }
    if !(output_scale >= 0.0) {
        return Err(invalid("output scale must be nonnegative"));
    }
    if g.dim() != stack.state_dim() || g.cols() != stack.mean_cols() {
        return Err(invalid("state does not match the state stack layout"));
    }
    let t = stack.precondition_diag(dt);
    let tinv = t.map(|x| 1.0 / x);
    let pre = GaussianState {
        mean: scale_rows(&g.mean, &tinv),
        cov_sqrt: scale_rows(&g.cov_sqrt, &tinv),
    };
    let q_sqrt = stack.sigma_sqrt_pre() * output_scale.sqrt();
    let (pred, back) = predict_affine(&pre, stack.phi_pre(), &q_sqrt)?;
    Ok((
        GaussianState {
            mean: scale_rows(&pred.mean, &t),
            cov_sqrt: scale_rows(&pred.cov_sqrt, &t),
        },
        AffineConditional {
            linear: scale_cols(&scale_rows(&back.linear, &t), &tinv),
            offset: scale_rows(&back.offset, &t),
            noise_sqrt: scale_rows(&back.noise_sqrt, &t),
        },
    ))
}

/// PI step-size update:
/// `dt · clip(safety · error^(−α) · prev_error^β, min_factor, max_factor)`.
pub fn pi_control(error: f64, dt: f64, prev_error: f64, controller: &ControllerConfig) -> f64 {
    let factor = if error <= 0.0 {
        controller.max_factor
    } else {
        controller.safety * error.powf(-controller.alpha) * prev_error.powf(controller.beta)
    };
    dt * factor.clamp(controller.min_factor, controller.max_factor)
}

/// Local output-scale estimate from one innovation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleEstimate {
    /// `zᵀ S⁻¹ z / n`, with `n` the number of residual entries.
    pub scale: f64,
    /// The innovation covariance was singular; `scale` is zero.
    pub singular: bool,
}

/// Quasi-maximum-likelihood output scale `zᵀ S⁻¹ z / n` with `S = Rᵀ R`.
///
/// `innovation_factor` is the upper-triangular `R`; the quadratic form is
/// evaluated through a triangular solve.
pub fn calibrate_scale(residual: &DMatrix<f64>, innovation_factor: &DMatrix<f64>) -> ScaleEstimate {
    let k = innovation_factor.nrows();
    let max_diag = (0..k)
        .map(|i| innovation_factor[(i, i)].abs())
        .fold(0.0, f64::max);
    let singular = (0..k)
        .any(|i| innovation_factor[(i, i)].abs() <= max_diag * f64::EPSILON * k as f64);
    if singular {
        return ScaleEstimate {
            scale: 0.0,
            singular: residual.iter().any(|x| *x != 0.0),
        };
    }
    let w = solve_upper_transposed(innovation_factor, residual);
    ScaleEstimate {
        scale: w.norm_squared() / residual.len() as f64,
        singular: false,
    }
}

/// A completed step.
#[derive(Clone, Debug)]
pub struct AcceptedStep {
    pub t: f64,
    pub marginal: GaussianState,
    /// `p(𝔲(t_prev) | 𝔲(t))`.
    pub backward: AffineConditional,
    pub output_scale: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Present iff accepted.
    pub step: Option<AcceptedStep>,
    pub error: f64,
    pub dt_used: f64,
    pub dt_next: f64,
    pub output_scale: f64,
    pub singular_calibration: bool,
}

/// Counters collected by a [`Solver`]; O(1) regardless of the number of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_dt: f64,
    pub max_dt: f64,
    pub singular_calibrations: usize,
}

impl Default for SolveStats {
    fn default() -> Self {
        Self {
            accepted: 0,
            rejected: 0,
            min_dt: f64::INFINITY,
            max_dt: 0.0,
            singular_calibrations: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct FixedGrid {
    points: Vec<f64>,
    cursor: usize,
}

/// Forward-pass driver shared by every solution mode.
///
/// Owns the controller state; stepping either adapts the step size or walks
/// a prescribed grid.
#[derive(Clone, Debug)]
pub struct Solver {
    problem: OdeProblem,
    config: SolverConfig,
    stack: StateStack,
    grid: Option<FixedGrid>,
    initial: Option<GaussianState>,
    prev_error: f64,
    stats: SolveStats,
    trace: Option<Vec<f64>>,
}

impl Solver {
    pub fn new(problem: &OdeProblem, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        if config.num_derivatives < problem.order {
            return Err(invalid(format!(
                "order-{} problem needs at least {} derivatives",
                problem.order, problem.order
            )));
        }
        if config.linearization == Linearization::Ek1
            && config.factorization != Factorization::Dense
        {
            return Err(Error::UnsupportedConfiguration(
                "first-order linearization requires the dense factorization".into(),
            ));
        }
        let stack = StateStack::new(config.num_derivatives, problem.dim, config.factorization)?;
        Ok(Self {
            problem: problem.clone(),
            config: config.clone(),
            stack,
            grid: None,
            initial: None,
            prev_error: 1.0,
            stats: SolveStats::default(),
            trace: None,
        })
    }

    /// Steps exactly through `grid` (which must start at `t0` and end at
    /// `t_end`) without error control.
    pub fn with_fixed_grid(mut self, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("fixed grid must be strictly increasing with >= 2 points"));
        }
        if grid[0] != self.problem.t0 || *grid.last().unwrap() != self.problem.t_end {
            return Err(invalid("fixed grid must start at t0 and end at t_end"));
        }
        self.grid = Some(FixedGrid {
            points: grid,
            cursor: 0,
        });
        Ok(self)
    }

    /// Replaces the Taylor-mode Dirac initialization.
    pub fn with_initial_state(mut self, g: GaussianState) -> Result<Self> {
        if g.dim() != self.stack.state_dim() || g.cols() != self.stack.mean_cols() {
            return Err(invalid("initial state does not match the state layout"));
        }
        self.initial = Some(g);
        Ok(self)
    }

    /// Records every accepted step size (for step-count studies only; this is
    /// O(N) memory).
    pub fn with_step_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn problem(&self) -> &OdeProblem {
        &self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn stack(&self) -> &StateStack {
        &self.stack
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn step_trace(&self) -> Option<&[f64]> {
        self.trace.as_deref()
    }

    pub fn is_fixed_grid(&self) -> bool {
        self.grid.is_some()
    }

    /// `p(𝔲(t0) | u0, r(t0) = 0)`.
    pub fn initial_state(&self) -> Result<GaussianState> {
        let prior = match &self.initial {
            Some(g) => g.clone(),
            None => taylor_init(&self.problem, &self.stack)?,
        };
        let lin = linearize(
            self.config.linearization,
            &self.problem,
            &self.stack,
            &prior.mean,
        )?;
        let (post, _) = condition_affine(&prior, &lin.h, &lin.b)?;
        Ok(post)
    }

    /// First step size: explicit override, the fixed grid's first spacing,
    /// or the usual two-stage starting-step heuristic with the second
    /// derivative read off the exact Taylor stack.
    pub fn initial_dt(&self, state: &GaussianState) -> f64 {
        let span = self.problem.t_end - self.problem.t0;
        if let Some(grid) = &self.grid {
            return grid.points[1] - grid.points[0];
        }
        if let Some(dt) = self.config.initial_dt {
            return dt.min(span);
        }
        let u0 = self.stack.derivative(&state.mean, 0);
        let scale: Vec<f64> = u0
            .iter()
            .map(|u| self.config.abs_tol + self.config.rel_tol * u.abs())
            .collect();
        let rms = |k: usize| {
            let v = self.stack.derivative(&state.mean, k);
            (v.iter()
                .zip(&scale)
                .map(|(x, s)| (x / s).powi(2))
                .sum::<f64>()
                / v.len() as f64)
                .sqrt()
        };
        let (d0, d1) = (rms(0), rms(1));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let l = self.stack.num_derivatives();
        let d2 = if l >= 2 { rms(2) } else { 0.0 };
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(1.0 / (l + 1) as f64)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// One attempt from `(state, t)` to `t_new = t + dt`. Pure apart from
    /// reading the controller's memory of the last accepted error.
    pub fn attempt_step(
        &self,
        state: &GaussianState,
        t: f64,
        dt: f64,
        t_new: f64,
    ) -> Result<StepOutcome> {
        if !(dt > 0.0) {
            return Err(invalid(format!("step size must be positive, got {dt}")));
        }
        let diverged = || Error::StepDiverged { t, dt };
        let stack = &self.stack;
        let cfg = &self.config;
        let tdiag = stack.precondition_diag(dt);
        let tinv = tdiag.map(|x| 1.0 / x);
        let mean_pred = scale_rows(&(stack.phi_pre() * scale_rows(&state.mean, &tinv)), &tdiag);
        if mean_pred.iter().any(|x| !x.is_finite()) {
            return Err(diverged());
        }
        let lin = linearize(cfg.linearization, &self.problem, stack, &mean_pred)?;
        let residual = lin.evaluate(&mean_pred);
        if residual.iter().any(|x| !x.is_finite()) {
            return Err(diverged());
        }

        // Innovation under the unit-scale process noise only.
        let hq = &lin.h * scale_rows(stack.sigma_sqrt_pre(), &tdiag);
        let k = hq.nrows();
        let r = qr_upper(hq.transpose());
        let r = r.view((0, 0), (k, k)).into_owned();
        let est = calibrate_scale(&residual, &r);
        let sigma = est.scale.sqrt();

        let u_pred = stack.selector(0) * &mean_pred;
        let mut sum = 0.0;
        for i in 0..residual.nrows() {
            let local = dt * sigma * hq.row(i).norm();
            for j in 0..residual.ncols() {
                let s = cfg.abs_tol + cfg.rel_tol * u_pred[(i, j)].abs();
                sum += (local / s).powi(2);
            }
        }
        let error = (sum / residual.len() as f64).sqrt();
        if !error.is_finite() {
            return Err(diverged());
        }

        let forced = self.grid.is_some();
        let accepted = forced || error <= 1.0;
        let prev = if accepted { self.prev_error } else { 1.0 };
        let dt_next = pi_control(error, dt, prev, &cfg.controller);
        let output_scale = match cfg.calibration {
            Calibration::TimeVarying => est.scale,
            Calibration::None => 1.0,
        };
        if !accepted {
            return Ok(StepOutcome {
                accepted,
                step: None,
                error,
                dt_used: dt,
                dt_next,
                output_scale,
                singular_calibration: est.singular,
            });
        }

        let (pred, backward) = predict(stack, state, dt, output_scale)?;
        let (marginal, _) = condition_affine(&pred, &lin.h, &lin.b)?;
        if !marginal.is_finite() || !backward.is_finite() {
            return Err(diverged());
        }
        Ok(StepOutcome {
            accepted,
            step: Some(AcceptedStep {
                t: t_new,
                marginal,
                backward,
                output_scale,
            }),
            error,
            dt_used: dt,
            dt_next,
            output_scale,
            singular_calibration: est.singular,
        })
    }

    /// Attempts steps from `(state, t)` until one is accepted. Returns the
    /// accepted step and the next step-size proposal.
    ///
    /// Adaptive steps are clipped to land exactly on `t_end`; fixed-grid
    /// steps go to the next grid point.
    pub fn step(&mut self, state: &GaussianState, t: f64, dt: f64) -> Result<(AcceptedStep, f64)> {
        let t_end = self.problem.t_end;
        if t >= t_end {
            return Err(invalid(format!("cannot step beyond t_end = {t_end}")));
        }
        let mut dt = dt;
        loop {
            if self.stats.accepted + self.stats.rejected >= self.config.max_steps {
                return Err(Error::MaxStepsExceeded(self.config.max_steps));
            }
            let (dt_try, t_new) = match &mut self.grid {
                Some(grid) => {
                    while grid.cursor + 1 < grid.points.len() && grid.points[grid.cursor] < t {
                        grid.cursor += 1;
                    }
                    if grid.points[grid.cursor] != t {
                        return Err(invalid(format!("t = {t} is not on the fixed grid")));
                    }
                    let t_new = grid.points[grid.cursor + 1];
                    (t_new - t, t_new)
                }
                None => {
                    let remaining = t_end - t;
                    if dt >= remaining {
                        (remaining, t_end)
                    } else {
                        (dt, t + dt)
                    }
                }
            };
            if !(dt_try > f64::EPSILON * t.abs().max(1.0) * 4.0) {
                return Err(Error::StepSizeUnderflow { t, dt: dt_try });
            }
            let outcome = self.attempt_step(state, t, dt_try, t_new)?;
            if outcome.singular_calibration {
                self.stats.singular_calibrations += 1;
            }
            match outcome.step {
                Some(step) => {
                    self.prev_error = outcome.error.max(1e-4);
                    self.stats.accepted += 1;
                    self.stats.min_dt = self.stats.min_dt.min(dt_try);
                    self.stats.max_dt = self.stats.max_dt.max(dt_try);
                    if let Some(trace) = &mut self.trace {
                        trace.push(dt_try);
                    }
                    let dt_next = match &self.grid {
                        Some(grid) if grid.cursor + 2 < grid.points.len() => {
                            grid.points[grid.cursor + 2] - grid.points[grid.cursor + 1]
                        }
                        Some(_) => dt_try,
                        None => outcome.dt_next,
                    };
                    return Ok((step, dt_next));
                }
                None => {
                    self.stats.rejected += 1;
                    dt = outcome.dt_next;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn predict_affine_degenerate_transition() {
        let g = GaussianState::new(dmatrix![1.0; -1.0], dmatrix![1.0, 0.0; 0.5, 2.0]).unwrap();
        let (pred, back) =
            predict_affine(&g, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(pred.mean, g.mean, epsilon = 1e-14);
        assert_relative_eq!(pred.covariance(), g.covariance(), epsilon = 1e-14);
        assert_relative_eq!(back.linear, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(back.offset, DMatrix::zeros(2, 1), epsilon = 1e-12);
        assert!(back.noise_sqrt.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn predict_dirac_gives_prior_noise() {
        let stack = StateStack::new(1, 1, Factorization::Dense).unwrap();
        let g = GaussianState::dirac(dmatrix![1.0; 2.0]);
        let (pred, back) = predict(&stack, &g, 1.0, 1.0).unwrap();
        assert_relative_eq!(pred.mean, dmatrix![3.0; 2.0], epsilon = 1e-14);
        assert_relative_eq!(
            pred.covariance(),
            dmatrix![1.0 / 3.0, 0.5; 0.5, 1.0],
            epsilon = 1e-14
        );
        assert!(back.linear.iter().all(|x| *x == 0.0));
        assert!(back.noise_sqrt.iter().all(|x| *x == 0.0));
        assert_relative_eq!(back.offset, g.mean, epsilon = 1e-14);
    }

    #[test]
    fn predict_standard_normal_unit_step() {
        let stack = StateStack::new(1, 1, Factorization::Dense).unwrap();
        let g = GaussianState::new(DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        let (pred, back) = predict(&stack, &g, 1.0, 1.0).unwrap();
        let expected = dmatrix![7.0 / 3.0, 1.5; 1.5, 2.0];
        assert_relative_eq!(pred.covariance(), expected, epsilon = 1e-13);
        // Backward gain against the dense formula Σ Φᵀ (Φ Σ Φᵀ + Q)⁻¹.
        let phi = dmatrix![1.0, 1.0; 0.0, 1.0];
        let gain = phi.transpose() * expected.clone().try_inverse().unwrap();
        assert_relative_eq!(back.linear, gain, epsilon = 1e-13);
        let post = DMatrix::identity(2, 2) - &gain * &phi;
        assert_relative_eq!(
            &back.noise_sqrt * back.noise_sqrt.transpose(),
            post,
            epsilon = 1e-13
        );
    }

    #[test]
    fn predict_rejects_nonpositive_step() {
        let stack = StateStack::new(1, 1, Factorization::Dense).unwrap();
        let g = GaussianState::dirac(DMatrix::zeros(2, 1));
        assert!(predict(&stack, &g, 0.0, 1.0).is_err());
    }

    #[test]
    fn pi_control_examples() {
        let c = ControllerConfig::for_order(1);
        assert_relative_eq!(pi_control(1.0, 2.0, 1.0, &c), 1.9);
        assert_relative_eq!(pi_control(0.0, 2.0, 1.0, &c), 20.0);
        let expected = 0.3 * 0.95 * 2f64.powf(-0.35) * 0.5f64.powf(0.2);
        assert_relative_eq!(pi_control(2.0, 0.3, 0.5, &c), expected, epsilon = 1e-15);
        assert_relative_eq!(pi_control(1e12, 1.0, 1.0, &c), 0.1);
    }

    #[test]
    fn calibrate_scale_examples() {
        let z0 = calibrate_scale(&DMatrix::zeros(2, 1), &DMatrix::identity(2, 2));
        assert_eq!(z0.scale, 0.0);
        let z1 = calibrate_scale(&dmatrix![1.0; 1.0], &DMatrix::identity(2, 2));
        assert_relative_eq!(z1.scale, 1.0);
        let singular = calibrate_scale(&dmatrix![1.0; 1.0], &dmatrix![1.0, 0.0; 0.0, 0.0]);
        assert!(singular.singular);
        assert_eq!(singular.scale, 0.0);
    }

    #[test]
    fn calibrate_scale_matches_dense_solve() {
        let r = dmatrix![2.0, 0.3, -0.1; 0.0, 1.5, 0.4; 0.0, 0.0, 0.7];
        let z = dmatrix![0.3; -1.2; 0.8];
        let s = r.transpose() * &r;
        let dense = (z.transpose() * s.try_inverse().unwrap() * &z)[(0, 0)] / 3.0;
        assert_relative_eq!(calibrate_scale(&z, &r).scale, dense, epsilon = 1e-12);
    }

    #[test]
    fn zero_field_steps_are_exact() {
        let bp = problems::affine(
            DMatrix::zeros(2, 2),
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            (0.0, 1.0),
        )
        .unwrap();
        let cfg = SolverConfig::new(2);
        let mut solver = Solver::new(&bp, &cfg).unwrap();
        let mut state = solver.initial_state().unwrap();
        let mut t = 0.0;
        let mut dt = solver.initial_dt(&state);
        while t < 1.0 {
            let out = solver.attempt_step(&state, t, dt.min(1.0 - t), (t + dt).min(1.0)).unwrap();
            assert!(out.accepted);
            assert_eq!(out.error, 0.0);
            let (step, next) = solver.step(&state, t, dt).unwrap();
            assert!(step.marginal.mean.iter().all(|x| *x == 0.0));
            state = step.marginal;
            t = step.t;
            dt = next;
        }
        assert_eq!(solver.stats().rejected, 0);
    }

    #[test]
    fn rejected_steps_shrink() {
        let bp = problems::logistic().problem;
        let cfg = SolverConfig::new(2).with_tolerances(1e-10, 1e-13);
        let solver = Solver::new(&bp, &cfg).unwrap();
        let state = solver.initial_state().unwrap();
        let out = solver.attempt_step(&state, 0.0, 5.0, 5.0).unwrap();
        assert!(!out.accepted);
        assert!(out.step.is_none());
        assert!(out.dt_next < out.dt_used);
    }

    #[test]
    fn ek1_on_isotropic_is_rejected() {
        let bp = problems::logistic().problem;
        let cfg = SolverConfig::new(2)
            .with_linearization(Linearization::Ek1)
            .with_factorization(Factorization::Isotropic);
        assert!(matches!(
            Solver::new(&bp, &cfg),
            Err(Error::UnsupportedConfiguration(_))
        ));
    }

    #[test]
    fn diverging_problem_reports_time() {
        // u' = u^3 blows up at t = 1/(2 u0^2) = 0.5.
        let bp = problems::custom_polynomial_blowup();
        let cfg = SolverConfig::new(3).with_tolerances(1e-6, 1e-9);
        let mut solver = Solver::new(&bp, &cfg).unwrap();
        let mut state = solver.initial_state().unwrap();
        let mut t = bp.t0;
        let mut dt = solver.initial_dt(&state);
        let err = loop {
            match solver.step(&state, t, dt) {
                Ok((s, next)) => {
                    state = s.marginal;
                    t = s.t;
                    dt = next;
                }
                Err(e) => break e,
            }
        };
        assert!(matches!(
            err,
            Error::StepDiverged { .. } | Error::StepSizeUnderflow { .. } | Error::MaxStepsExceeded(_)
        ));
    }
}
