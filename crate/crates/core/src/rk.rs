//! Embedded explicit Runge–Kutta pairs with PI step-size control, used as
//! non-probabilistic baselines and for high-accuracy reference solutions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::OdeProblem;
use crate::stepping::{pi_control, ControllerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tableau {
    /// Bogacki–Shampine 3(2).
    Bosh3,
    /// Dormand–Prince 5(4).
    Dopri5,
}

struct Coefficients {
    c: &'static [f64],
    a: &'static [&'static [f64]],
    b: &'static [f64],
    b_err: &'static [f64],
    order: usize,
}

const BOSH3: Coefficients = Coefficients {
    c: &[0.0, 0.5, 0.75, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    b_err: &[7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125],
    order: 3,
};

const DOPRI5: Coefficients = Coefficients {
    c: &[0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ],
        &[
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ],
    b: &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ],
    b_err: &[
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ],
    order: 5,
};

impl Tableau {
    fn coefficients(self) -> &'static Coefficients {
        match self {
            Tableau::Bosh3 => &BOSH3,
            Tableau::Dopri5 => &DOPRI5,
        }
    }

    /// Order of the propagated solution.
    pub fn order(self) -> usize {
        self.coefficients().order
    }

    pub fn id(self) -> &'static str {
        match self {
            Tableau::Bosh3 => "rk-bosh3",
            Tableau::Dopri5 => "rk-dopri5",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkConfig {
    pub tableau: Tableau,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub controller: ControllerConfig,
    pub max_steps: usize,
}

impl RkConfig {
    pub fn new(tableau: Tableau, rel_tol: f64, abs_tol: f64) -> Self {
        // The error estimate is of order p − 1.
        let controller = ControllerConfig::for_order(tableau.order() - 1);
        Self {
            tableau,
            rel_tol,
            abs_tol,
            controller,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RkSolution {
    /// Full state (including velocities for second-order problems) at each
    /// requested time.
    pub values: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

/// One step; returns `(y_new, y_new − ŷ_new)`.
fn rk_step<F>(f: &F, tab: &Coefficients, t: f64, y: &[f64], h: f64) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = y.len();
    let s = tab.c.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut tmp = vec![0.0; n];
    for i in 0..s {
        tmp.copy_from_slice(y);
        for (j, aij) in tab.a[i].iter().enumerate() {
            if *aij != 0.0 {
                for (x, kj) in tmp.iter_mut().zip(&k[j]) {
                    *x += h * aij * kj;
                }
            }
        }
        k.push(f(t + tab.c[i] * h, &tmp));
    }
    let mut y_new = y.to_vec();
    let mut err = vec![0.0; n];
    for i in 0..s {
        let (bi, ei) = (tab.b[i], tab.b[i] - tab.b_err[i]);
        for r in 0..n {
            y_new[r] += h * bi * k[i][r];
            err[r] += h * ei * k[i][r];
        }
    }
    (y_new, err)
}

/// Adaptive integration of `y′ = f(t, y)` from `(t0, y0)`, returning the
/// state at each of the increasing `times` (steps are clipped to hit them).
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], times: &[f64], cfg: &RkConfig) -> Result<RkSolution>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|s| *s < t0) {
        return Err(invalid("output times must be sorted and start at or after t0"));
    }
    if !(cfg.rel_tol > 0.0 && cfg.abs_tol > 0.0) {
        return Err(invalid("tolerances must be positive"));
    }
    let tab = cfg.tableau.coefficients();
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut values = Vec::with_capacity(times.len());

    // Starting step from the scaled norms of y and f(y).
    let f0 = f(t0, &y);
    let scale: Vec<f64> = y.iter().map(|v| cfg.abs_tol + cfg.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let (d0, d1) = (rms(&y), rms(&f0));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };

    let mut prev_error = 1.0;
    let (mut accepted, mut rejected) = (0usize, 0usize);
    for &target in times {
        while t < target {
            if accepted + rejected >= cfg.max_steps {
                return Err(Error::MaxStepsExceeded(cfg.max_steps));
            }
            let (h_try, t_new) = if h >= target - t {
                (target - t, target)
            } else {
                (h, t + h)
            };
            if !(h_try > 4.0 * f64::EPSILON * t.abs().max(1.0)) {
                return Err(Error::StepSizeUnderflow { t, dt: h_try });
            }
            let (y_new, err) = rk_step(&f, tab, t, &y, h_try);
            let e = (err
                .iter()
                .zip(y.iter().zip(&y_new))
                .map(|(e, (a, b))| {
                    let s = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
                    (e / s).powi(2)
                })
                .sum::<f64>()
                / n as f64)
                .sqrt();
            if !e.is_finite() {
                return Err(Error::StepDiverged { t, dt: h_try });
            }
            if e <= 1.0 {
                let h_next = pi_control(e, h_try, prev_error, &cfg.controller);
                prev_error = e.max(1e-4);
                accepted += 1;
                t = t_new;
                y = y_new;
                // A step shortened to hit a target does not shrink the
                // proposal.
                h = if t_new == target && h > h_try { h } else { h_next };
            } else {
                rejected += 1;
                h = pi_control(e, h_try, 1.0, &cfg.controller);
            }
        }
        values.push(y.clone());
    }
    Ok(RkSolution {
        values,
        accepted,
        rejected,
    })
}

/// `n` equal steps from `t0` to `t1`.
pub fn integrate_fixed<F>(f: F, t0: f64, t1: f64, y0: &[f64], n: usize, tableau: Tableau) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let tab = tableau.coefficients();
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    for i in 0..n {
        y = rk_step(&f, tab, t0 + i as f64 * h, &y, h).0;
    }
    y
}

/// First-order form of an [`OdeProblem`]: `[u]` or `[u, u′]`.
pub fn first_order_system(problem: &OdeProblem) -> (Vec<f64>, impl Fn(f64, &[f64]) -> Vec<f64> + '_) {
    let d = problem.dim;
    let y0 = problem.initial.concat();
    let f = move |_t: f64, y: &[f64]| -> Vec<f64> {
        if problem.order == 1 {
            problem.eval(y, &[])
        } else {
            let mut out = y[d..].to_vec();
            out.extend(problem.eval(&y[..d], &y[d..]));
            out
        }
    };
    (y0, f)
}

/// `u` at `times` for an [`OdeProblem`], plus step statistics.
pub fn solve_problem(problem: &OdeProblem, times: &[f64], cfg: &RkConfig) -> Result<RkSolution> {
    let (y0, f) = first_order_system(problem);
    let mut sol = integrate(f, problem.t0, &y0, times, cfg)?;
    for v in &mut sol.values {
        v.truncate(problem.dim);
    }
    Ok(sol)
}
