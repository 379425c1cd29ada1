//! ODE problem definitions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::jet::Jet;

/// Partial derivatives of a vector field.
#[derive(Clone, Debug)]
pub struct Jacobian {
    /// `∂f/∂u`, `d × d`.
    pub wrt_u: DMatrix<f64>,
    /// `∂f/∂u′` for second-order problems, `d × d`.
    pub wrt_du: Option<DMatrix<f64>>,
}

/// Right-hand side `f` of `u^(k) = f(u, [u′])`.
///
/// First-order fields ignore `du` (it is passed as an empty slice).
pub trait VectorField: Send + Sync {
    fn eval(&self, u: &[f64], du: &[f64]) -> Vec<f64>;

    /// Evaluation on truncated Taylor series; enables Taylor-mode
    /// initialization. Fields that cannot be written in jet arithmetic
    /// return `None` and must come with a user-supplied derivative stack.
    fn eval_jet(&self, _u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
        None
    }

    /// Hand-written Jacobians; required for first-order linearization.
    fn jacobian(&self, _u: &[f64], _du: &[f64]) -> Option<Jacobian> {
        None
    }
}

/// Forward-mode Jacobian of a field with a jet implementation, using
/// degree-one jets (one evaluation per input coordinate).
pub fn jacobian_via_jets(field: &dyn VectorField, u: &[f64], du: &[f64]) -> Option<Jacobian> {
    let d = u.len();
    let seed = |x: &[f64], k: Option<usize>| -> Vec<Jet> {
        x.iter()
            .enumerate()
            .map(|(i, v)| Jet::new(vec![*v, if Some(i) == k { 1.0 } else { 0.0 }]))
            .collect()
    };
    let column = |ku: Option<usize>, kdu: Option<usize>| -> Option<Vec<f64>> {
        let out = field.eval_jet(&seed(u, ku), &seed(du, kdu))?;
        Some(out.iter().map(|j| j.coeffs()[1]).collect())
    };
    let mut wrt_u = DMatrix::zeros(d, d);
    for k in 0..d {
        wrt_u.set_column(k, &nalgebra::DVector::from_vec(column(Some(k), None)?));
    }
    let wrt_du = if du.is_empty() {
        None
    } else {
        let mut m = DMatrix::zeros(d, du.len());
        for k in 0..du.len() {
            m.set_column(k, &nalgebra::DVector::from_vec(column(None, Some(k))?));
        }
        Some(m)
    };
    Some(Jacobian { wrt_u, wrt_du })
}

/// Initial value problem `u^(k)(t) = f(u, [u′])` on `[t0, t_end]`, `k ∈ {1, 2}`.
#[derive(Clone)]
pub struct OdeProblem {
    pub field: Arc<dyn VectorField>,
    pub dim: usize,
    pub order: usize,
    /// `[u0]` or `[u0, u0′]`.
    pub initial: Vec<Vec<f64>>,
    pub t0: f64,
    pub t_end: f64,
    /// Exact derivative stack `[u, u′, …]` at `t0`, used when the field has
    /// no jet implementation. Entries beyond its length are zero-filled.
    pub initial_stack: Option<Vec<Vec<f64>>>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("dim", &self.dim)
            .field("order", &self.order)
            .field("initial", &self.initial)
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .finish_non_exhaustive()
    }
}

impl OdeProblem {
    pub fn first_order(
        field: Arc<dyn VectorField>,
        u0: Vec<f64>,
        span: (f64, f64),
    ) -> Result<Self> {
        let p = Self {
            field,
            dim: u0.len(),
            order: 1,
            initial: vec![u0],
            t0: span.0,
            t_end: span.1,
            initial_stack: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn second_order(
        field: Arc<dyn VectorField>,
        u0: Vec<f64>,
        du0: Vec<f64>,
        span: (f64, f64),
    ) -> Result<Self> {
        let p = Self {
            field,
            dim: u0.len(),
            order: 2,
            initial: vec![u0, du0],
            t0: span.0,
            t_end: span.1,
            initial_stack: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_initial_stack(mut self, stack: Vec<Vec<f64>>) -> Result<Self> {
        if stack.iter().any(|v| v.len() != self.dim) {
            return Err(invalid("initial stack entries must have length dim"));
        }
        self.initial_stack = Some(stack);
        Ok(self)
    }

    pub fn with_span(mut self, t0: f64, t_end: f64) -> Result<Self> {
        self.t0 = t0;
        self.t_end = t_end;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("problem dimension must be positive"));
        }
        if !(1..=2).contains(&self.order) {
            return Err(invalid(format!("unsupported derivative order {}", self.order)));
        }
        if self.initial.len() != self.order || self.initial.iter().any(|v| v.len() != self.dim) {
            return Err(invalid("initial values do not match order and dimension"));
        }
        if !(self.t0 < self.t_end) || !self.t0.is_finite() || !self.t_end.is_finite() {
            return Err(invalid(format!(
                "time span must satisfy t0 < t_end, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        let f0 = self.eval(&self.initial[0], self.initial.get(1).map_or(&[], |v| v));
        if f0.len() != self.dim {
            return Err(invalid(format!(
                "vector field returned {} values for a {}-dimensional problem",
                f0.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn eval(&self, u: &[f64], du: &[f64]) -> Vec<f64> {
        self.field.eval(u, du)
    }

    /// `u^(k) − f(u, [u′])` for a derivative stack given as slices.
    pub fn residual(&self, stack: &[Vec<f64>]) -> Vec<f64> {
        let du: &[f64] = if self.order == 2 { &stack[1] } else { &[] };
        let f = self.eval(&stack[0], du);
        stack[self.order]
            .iter()
            .zip(&f)
            .map(|(a, b)| a - b)
            .collect()
    }
}
