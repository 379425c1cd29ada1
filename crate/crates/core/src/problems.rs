//! Benchmark problems with their recommended solver settings and reference
//! solutions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::jet::{Jet, Real};
use crate::linearize::Linearization;
use crate::prior::Factorization;
use crate::problem::{jacobian_via_jets, Jacobian, OdeProblem, VectorField};
use crate::rk::{self, RkConfig, Tableau};
use crate::stepping::SolverConfig;

/// How reference values for error measurements are obtained.
#[derive(Clone)]
pub enum ReferencePolicy {
    ClosedForm(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
    EmbeddedRk {
        tableau: Tableau,
        rel_tol: f64,
        abs_tol: f64,
    },
}

impl ReferencePolicy {
    fn rk_default() -> Self {
        ReferencePolicy::EmbeddedRk {
            tableau: Tableau::Dopri5,
            rel_tol: 1e-13,
            abs_tol: 1e-15,
        }
    }

    /// Identifier recorded in output metadata.
    pub fn id(&self) -> String {
        match self {
            ReferencePolicy::ClosedForm(_) => "closed-form".into(),
            ReferencePolicy::EmbeddedRk {
                tableau,
                rel_tol,
                abs_tol,
            } => format!("{}(rtol={rel_tol:e},atol={abs_tol:e})", tableau.id()),
        }
    }
}

impl fmt::Debug for ReferencePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Problem-specific solver defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recommended {
    pub num_derivatives: usize,
    pub linearization: Linearization,
    pub factorization: Factorization,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub name: String,
    pub problem: OdeProblem,
    pub recommended: Recommended,
    pub reference: ReferencePolicy,
}

impl BenchmarkProblem {
    pub fn config(&self) -> SolverConfig {
        let r = &self.recommended;
        SolverConfig::new(r.num_derivatives)
            .with_linearization(r.linearization)
            .with_factorization(r.factorization)
            .with_tolerances(r.rel_tol, r.abs_tol)
    }

    /// Reference values of `u` at `times` (sorted, within the time span).
    pub fn reference(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        match &self.reference {
            ReferencePolicy::ClosedForm(f) => Ok(times.iter().map(|t| f(*t)).collect()),
            ReferencePolicy::EmbeddedRk {
                tableau,
                rel_tol,
                abs_tol,
            } => Ok(rk::solve_problem(
                &self.problem,
                times,
                &RkConfig::new(*tableau, *rel_tol, *abs_tol),
            )?
            .values),
        }
    }
}

fn recommended(
    num_derivatives: usize,
    linearization: Linearization,
    factorization: Factorization,
    rel_tol: f64,
    abs_tol: f64,
) -> Recommended {
    Recommended {
        num_derivatives,
        linearization,
        factorization,
        rel_tol,
        abs_tol,
    }
}

pub const PROBLEM_NAMES: &[&str] = &[
    "logistic",
    "van-der-pol",
    "rigid-body",
    "brusselator",
    "pleiades",
    "three-body",
];

/// Looks a problem up by name; `d_points` is used by the Brusselator only.
pub fn by_name(name: &str, d_points: usize) -> Result<BenchmarkProblem> {
    match name {
        "logistic" => Ok(logistic()),
        "van-der-pol" | "vdp" => Ok(van_der_pol()),
        "rigid-body" => Ok(rigid_body()),
        "brusselator" => brusselator(d_points),
        "pleiades" => Ok(pleiades()),
        "three-body" => Ok(three_body()),
        _ => Err(invalid(format!(
            "unknown problem '{name}', expected one of {PROBLEM_NAMES:?}"
        ))),
    }
}

// ---------------------------------------------------------------- logistic

struct Logistic;

impl Logistic {
    fn f<T: Real>(u: &[T]) -> Vec<T> {
        vec![u[0].clone() * (-u[0].clone() + 1.0)]
    }
}

impl VectorField for Logistic {
    fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
        Self::f(u)
    }
    fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        Some(Self::f(u))
    }
    fn jacobian(&self, u: &[f64], _du: &[f64]) -> Option<Jacobian> {
        Some(Jacobian {
            wrt_u: DMatrix::from_element(1, 1, 1.0 - 2.0 * u[0]),
            wrt_du: None,
        })
    }
}

/// `u′ = u(1 − u)`, `u(0) = 0.5` on `[0, 10]`.
pub fn logistic() -> BenchmarkProblem {
    let problem = OdeProblem::first_order(Arc::new(Logistic), vec![0.5], (0.0, 10.0))
        .expect("valid constants");
    BenchmarkProblem {
        name: "logistic".into(),
        problem,
        recommended: recommended(3, Linearization::Ek0, Factorization::Dense, 1e-8, 1e-11),
        reference: ReferencePolicy::ClosedForm(Arc::new(|t| vec![1.0 / (1.0 + (-t).exp())])),
    }
}

// ------------------------------------------------------------ van der Pol

pub const VDP_STIFFNESS: f64 = 1e3;

struct VanDerPol;

impl VanDerPol {
    fn f<T: Real>(u: &[T], du: &[T]) -> Vec<T> {
        let x = u[0].clone();
        vec![(du[0].clone() * (-(x.clone() * x.clone()) + 1.0) - x) * VDP_STIFFNESS]
    }
}

impl VectorField for VanDerPol {
    fn eval(&self, u: &[f64], du: &[f64]) -> Vec<f64> {
        Self::f(u, du)
    }
    fn eval_jet(&self, u: &[Jet], du: &[Jet]) -> Option<Vec<Jet>> {
        Some(Self::f(u, du))
    }
    fn jacobian(&self, u: &[f64], du: &[f64]) -> Option<Jacobian> {
        Some(Jacobian {
            wrt_u: DMatrix::from_element(1, 1, VDP_STIFFNESS * (-2.0 * u[0] * du[0] - 1.0)),
            wrt_du: Some(DMatrix::from_element(
                1,
                1,
                VDP_STIFFNESS * (1.0 - u[0] * u[0]),
            )),
        })
    }
}

/// `u″ = 10³ (u′(1 − u²) − u)`, `u(0) = 2`, `u′(0) = 0` on `[0, 6.3]`.
pub fn van_der_pol() -> BenchmarkProblem {
    let problem =
        OdeProblem::second_order(Arc::new(VanDerPol), vec![2.0], vec![0.0], (0.0, 6.3))
            .expect("valid constants");
    BenchmarkProblem {
        name: "van-der-pol".into(),
        problem,
        recommended: recommended(4, Linearization::Ek1, Factorization::Dense, 1e-3, 1e-3),
        reference: ReferencePolicy::rk_default(),
    }
}

// -------------------------------------------------------------- rigid body

struct RigidBody;

impl RigidBody {
    fn f<T: Real>(u: &[T]) -> Vec<T> {
        vec![
            u[1].clone() * u[2].clone() * -2.0,
            u[0].clone() * u[2].clone() * 1.25,
            u[0].clone() * u[1].clone() * -0.5,
        ]
    }
}

impl VectorField for RigidBody {
    fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
        Self::f(u)
    }
    fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        Some(Self::f(u))
    }
    fn jacobian(&self, u: &[f64], _du: &[f64]) -> Option<Jacobian> {
        #[rustfmt::skip]
        let wrt_u = DMatrix::from_row_slice(3, 3, &[
            0.0,          -2.0 * u[2], -2.0 * u[1],
            1.25 * u[2],  0.0,         1.25 * u[0],
            -0.5 * u[1],  -0.5 * u[0], 0.0,
        ]);
        Some(Jacobian { wrt_u, wrt_du: None })
    }
}

/// Euler's rigid-body equations, `u(0) = (1, 0, 0.9)` on `[0, 50]`.
pub fn rigid_body() -> BenchmarkProblem {
    let problem = OdeProblem::first_order(Arc::new(RigidBody), vec![1.0, 0.0, 0.9], (0.0, 50.0))
        .expect("valid constants");
    BenchmarkProblem {
        name: "rigid-body".into(),
        problem,
        recommended: recommended(4, Linearization::Ek0, Factorization::Isotropic, 1e-6, 1e-9),
        reference: ReferencePolicy::rk_default(),
    }
}

// ------------------------------------------------------------- Brusselator

pub const BRUSSELATOR_DIFFUSION: f64 = 1.0 / 50.0;

struct Brusselator {
    points: usize,
}

impl Brusselator {
    fn f<T: Real>(&self, y: &[T]) -> Vec<T> {
        let n = self.points;
        let inv_h2 = ((n - 1) * (n - 1)) as f64;
        let (u, v) = y.split_at(n);
        let mut fu = Vec::with_capacity(n);
        let mut fv = Vec::with_capacity(n);
        for i in 0..n {
            if i == 0 || i == n - 1 {
                // Dirichlet boundary: endpoint values stay at their initial values.
                fu.push(u[i].constant_like(0.0));
                fv.push(v[i].constant_like(0.0));
                continue;
            }
            let lap_u = (u[i - 1].clone() - u[i].clone() * 2.0 + u[i + 1].clone()) * inv_h2;
            let lap_v = (v[i - 1].clone() - v[i].clone() * 2.0 + v[i + 1].clone()) * inv_h2;
            let uuv = u[i].clone() * u[i].clone() * v[i].clone();
            fu.push(uuv.clone() - u[i].clone() * 4.0 + lap_u * BRUSSELATOR_DIFFUSION + 1.0);
            fv.push(u[i].clone() * 3.0 - uuv + lap_v * BRUSSELATOR_DIFFUSION);
        }
        fu.extend(fv);
        fu
    }
}

impl VectorField for Brusselator {
    fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
        self.f(u)
    }
    fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        Some(self.f(u))
    }
    fn jacobian(&self, y: &[f64], _du: &[f64]) -> Option<Jacobian> {
        let n = self.points;
        let c = BRUSSELATOR_DIFFUSION * ((n - 1) * (n - 1)) as f64;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 1..n.saturating_sub(1) {
            let (u, v) = (y[i], y[n + i]);
            j[(i, i)] = 2.0 * u * v - 4.0 - 2.0 * c;
            j[(i, i - 1)] = c;
            j[(i, i + 1)] = c;
            j[(i, n + i)] = u * u;
            j[(n + i, i)] = 3.0 - 2.0 * u * v;
            j[(n + i, n + i)] = -u * u - 2.0 * c;
            j[(n + i, n + i - 1)] = c;
            j[(n + i, n + i + 1)] = c;
        }
        Some(Jacobian {
            wrt_u: j,
            wrt_du: None,
        })
    }
}

/// Method-of-lines Brusselator on `d_points` nodes `x_i = i/(d_points − 1)`;
/// the state is `[u_0..u_{d−1}, v_0..v_{d−1}]`.
pub fn brusselator(d_points: usize) -> Result<BenchmarkProblem> {
    if d_points < 2 {
        return Err(invalid("the Brusselator needs at least two grid points"));
    }
    let h = 1.0 / (d_points - 1) as f64;
    let mut y0: Vec<f64> = (0..d_points)
        .map(|i| 1.0 + (2.0 * std::f64::consts::PI * i as f64 * h).sin())
        .collect();
    y0.extend(std::iter::repeat_n(3.0, d_points));
    let problem = OdeProblem::first_order(
        Arc::new(Brusselator { points: d_points }),
        y0,
        (0.0, 10.0),
    )?;
    Ok(BenchmarkProblem {
        name: "brusselator".into(),
        problem,
        recommended: recommended(4, Linearization::Ek0, Factorization::Isotropic, 1e-8, 1e-11),
        reference: ReferencePolicy::rk_default(),
    })
}

// ---------------------------------------------------------------- Pleiades

pub const PLEIADES_STARS: usize = 7;

struct Pleiades;

impl Pleiades {
    fn f<T: Real>(q: &[T]) -> Vec<T> {
        let n = PLEIADES_STARS;
        let (x, y) = q.split_at(n);
        let mut ax: Vec<T> = (0..n).map(|i| x[i].constant_like(0.0)).collect();
        let mut ay = ax.clone();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = x[j].clone() - x[i].clone();
                let dy = y[j].clone() - y[i].clone();
                let r2 = dx.clone() * dx.clone() + dy.clone() * dy.clone();
                let w = r2.powf(-1.5) * (j + 1) as f64;
                ax[i] = ax[i].clone() + dx * w.clone();
                ay[i] = ay[i].clone() + dy * w;
            }
        }
        ax.extend(ay);
        ax
    }
}

impl VectorField for Pleiades {
    fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
        Self::f(u)
    }
    fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        Some(Self::f(u))
    }
    fn jacobian(&self, u: &[f64], du: &[f64]) -> Option<Jacobian> {
        jacobian_via_jets(self, u, du)
    }
}

/// Seven-body planar gravitational problem with masses `m_i = i`; positions
/// are laid out as `[x_1..x_7, y_1..y_7]`. Span `[0, 3]`.
pub fn pleiades() -> BenchmarkProblem {
    let mut u0 = vec![3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0];
    u0.extend([3.0, -3.0, 2.0, 0.0, 0.0, -4.0, 4.0]);
    let mut du0 = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5];
    du0.extend([0.0, 0.0, 0.0, -1.25, 1.0, 0.0, 0.0]);
    let problem = OdeProblem::second_order(Arc::new(Pleiades), u0, du0, (0.0, 3.0))
        .expect("valid constants");
    BenchmarkProblem {
        name: "pleiades".into(),
        problem,
        recommended: recommended(4, Linearization::Ek0, Factorization::Dense, 1e-6, 1e-9),
        reference: ReferencePolicy::rk_default(),
    }
}

// -------------------------------------------------------------- three-body

pub const THREE_BODY_MU: f64 = 0.012277471;
pub const THREE_BODY_PERIOD: f64 = 17.065_216_560_157_962_558_891_720_624_9;

struct ThreeBody;

impl ThreeBody {
    fn f<T: Real>(u: &[T], du: &[T]) -> Vec<T> {
        let mu = THREE_BODY_MU;
        let mu_p = 1.0 - mu;
        let (y1, y2) = (u[0].clone(), u[1].clone());
        let a = y1.clone() + mu;
        let b = y1.clone() - mu_p;
        let y2s = y2.clone() * y2.clone();
        let d1 = (a.clone() * a.clone() + y2s.clone()).powf(1.5);
        let d2 = (b.clone() * b.clone() + y2s).powf(1.5);
        let f1 = y1 + du[1].clone() * 2.0 - a * mu_p / d1.clone() - b * mu / d2.clone();
        let f2 = y2.clone() - du[0].clone() * 2.0 - y2.clone() * mu_p / d1 - y2 * mu / d2;
        vec![f1, f2]
    }
}

impl VectorField for ThreeBody {
    fn eval(&self, u: &[f64], du: &[f64]) -> Vec<f64> {
        Self::f(u, du)
    }
    fn eval_jet(&self, u: &[Jet], du: &[Jet]) -> Option<Vec<Jet>> {
        Some(Self::f(u, du))
    }
    fn jacobian(&self, u: &[f64], du: &[f64]) -> Option<Jacobian> {
        jacobian_via_jets(self, u, du)
    }
}

/// Restricted three-body problem (Arenstorf orbit) over one period.
pub fn three_body() -> BenchmarkProblem {
    let problem = OdeProblem::second_order(
        Arc::new(ThreeBody),
        vec![0.994, 0.0],
        vec![0.0, -2.001_585_106_379_082_5],
        (0.0, THREE_BODY_PERIOD),
    )
    .expect("valid constants");
    BenchmarkProblem {
        name: "three-body".into(),
        problem,
        recommended: recommended(4, Linearization::Ek0, Factorization::Dense, 1e-7, 1e-10),
        reference: ReferencePolicy::rk_default(),
    }
}

/// Jacobi constant `x² + y² + 2μ′/r₁ + 2μ/r₂ − |v|²` of a three-body state
/// `[x, y, ẋ, ẏ]`.
pub fn jacobi_constant(state: &[f64]) -> f64 {
    let mu = THREE_BODY_MU;
    let mu_p = 1.0 - mu;
    let (x, y, vx, vy) = (state[0], state[1], state[2], state[3]);
    let r1 = ((x + mu).powi(2) + y * y).sqrt();
    let r2 = ((x - mu_p).powi(2) + y * y).sqrt();
    x * x + y * y + 2.0 * mu_p / r1 + 2.0 * mu / r2 - vx * vx - vy * vy
}

// ------------------------------------------------------------------ affine

struct Affine {
    m: DMatrix<f64>,
    c: Vec<f64>,
}

impl Affine {
    fn f<T: Real>(&self, u: &[T]) -> Vec<T> {
        (0..self.c.len())
            .map(|i| {
                let mut acc = u[0].constant_like(self.c[i]);
                for (j, uj) in u.iter().enumerate() {
                    if self.m[(i, j)] != 0.0 {
                        acc = acc + uj.clone() * self.m[(i, j)];
                    }
                }
                acc
            })
            .collect()
    }
}

impl VectorField for Affine {
    fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
        self.f(u)
    }
    fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        Some(self.f(u))
    }
    fn jacobian(&self, _u: &[f64], _du: &[f64]) -> Option<Jacobian> {
        Some(Jacobian {
            wrt_u: self.m.clone(),
            wrt_du: None,
        })
    }
}

/// `u′ = M u + c`.
pub fn affine(m: DMatrix<f64>, c: Vec<f64>, u0: Vec<f64>, span: (f64, f64)) -> Result<OdeProblem> {
    let d = u0.len();
    if m.shape() != (d, d) || c.len() != d {
        return Err(invalid("affine field dimensions do not match u0"));
    }
    OdeProblem::first_order(Arc::new(Affine { m, c }), u0, span)
}

/// Scalar decay `u′ = −u` with its closed-form reference.
pub fn decay(u0: f64, span: (f64, f64)) -> Result<BenchmarkProblem> {
    let problem = affine(DMatrix::from_element(1, 1, -1.0), vec![0.0], vec![u0], span)?;
    let t0 = span.0;
    Ok(BenchmarkProblem {
        name: "decay".into(),
        problem,
        recommended: recommended(3, Linearization::Ek1, Factorization::Dense, 1e-6, 1e-9),
        reference: ReferencePolicy::ClosedForm(Arc::new(move |t| vec![u0 * (t0 - t).exp()])),
    })
}

#[cfg(test)]
pub(crate) fn custom_polynomial_blowup() -> OdeProblem {
    struct Cubic;
    impl VectorField for Cubic {
        fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
            vec![u[0].powi(3)]
        }
        fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
            Some(vec![u[0].clone() * u[0].clone() * u[0].clone()])
        }
    }
    OdeProblem::first_order(Arc::new(Cubic), vec![1.0], (0.0, 1.0)).unwrap()
}
