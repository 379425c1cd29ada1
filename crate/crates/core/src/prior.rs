//! Integrated-Wiener-process prior: transitions, preconditioning, state
//! layout and Taylor-mode initialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianState;
use crate::jet::{factorial, Jet};
use crate::problem::OdeProblem;

/// Largest supported number of derivatives. The preconditioned diffusion is a
/// Hilbert-type matrix whose Cholesky factor degrades beyond this.
pub const MAX_DERIVATIVES: usize = 10;

fn check_order(num_derivatives: usize) -> Result<()> {
    if num_derivatives == 0 || num_derivatives > MAX_DERIVATIVES {
        return Err(invalid(format!(
            "number of derivatives must be in 1..={MAX_DERIVATIVES}, got {num_derivatives}"
        )));
    }
    Ok(())
}

/// Diagonal of the step-size preconditioner
/// `T(dt) = diag(√dt · dt^(L−i) / (L−i)!)`, `i = 0..=L`.
pub fn precondition(num_derivatives: usize, dt: f64) -> DVector<f64> {
    let l = num_derivatives;
    DVector::from_fn(l + 1, |i, _| {
        dt.sqrt() * dt.powi((l - i) as i32) / factorial(l - i)
    })
}

/// `Φ(dt)` with `Φ_ij = dt^(j−i) / (j−i)!` for `j ≥ i`.
pub fn iwp_phi(num_derivatives: usize, dt: f64) -> DMatrix<f64> {
    let n = num_derivatives + 1;
    DMatrix::from_fn(n, n, |i, j| {
        if j >= i {
            dt.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    })
}

/// Dense `Σ(dt)` with
/// `Σ_ij = dt^(2L+1−i−j) / ((2L+1−i−j) (L−i)! (L−j)!)`.
pub fn iwp_sigma(num_derivatives: usize, dt: f64) -> DMatrix<f64> {
    let l = num_derivatives;
    let n = l + 1;
    DMatrix::from_fn(n, n, |i, j| {
        let p = 2 * l + 1 - i - j;
        dt.powi(p as i32) / (p as f64 * factorial(l - i) * factorial(l - j))
    })
}

/// Transition `(Φ(dt), √Σ(dt))` of the `L`-times integrated Wiener process.
///
/// The factor is assembled as `T(dt) · chol(Σ̄)` where `Σ̄ = T⁻¹ Σ T⁻ᵀ` does
/// not depend on `dt`, which avoids forming the badly scaled `Σ(dt)`.
pub fn iwp_transition(num_derivatives: usize, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) {
        return Err(invalid(format!("step size must be positive, got {dt}")));
    }
    let model = TransitionModel::new(num_derivatives)?;
    Ok((model.phi(dt), model.sigma_sqrt(dt)))
}

/// Closed-form Gauss–Markov transition in preconditioned coordinates.
#[derive(Clone, Debug)]
pub struct TransitionModel {
    num_derivatives: usize,
    phi_pre: DMatrix<f64>,
    sigma_sqrt_pre: DMatrix<f64>,
}

impl TransitionModel {
    pub fn new(num_derivatives: usize) -> Result<Self> {
        check_order(num_derivatives)?;
        let l = num_derivatives;
        let n = l + 1;
        // T⁻¹ Φ T has binomial entries C(L−i, j−i).
        let phi_pre = DMatrix::from_fn(n, n, |i, j| {
            if j >= i {
                factorial(l - i) / (factorial(j - i) * factorial(l - j))
            } else {
                0.0
            }
        });
        let sigma_pre = DMatrix::from_fn(n, n, |i, j| 1.0 / (2 * l + 1 - i - j) as f64);
        let sigma_sqrt_pre = sigma_pre
            .cholesky()
            .ok_or_else(|| invalid("preconditioned diffusion is not positive definite"))?
            .l();
        Ok(Self {
            num_derivatives,
            phi_pre,
            sigma_sqrt_pre,
        })
    }

    pub fn num_derivatives(&self) -> usize {
        self.num_derivatives
    }

    pub fn preconditioned_phi(&self) -> &DMatrix<f64> {
        &self.phi_pre
    }

    pub fn preconditioned_sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt_pre
    }

    pub fn precondition(&self, dt: f64) -> DVector<f64> {
        precondition(self.num_derivatives, dt)
    }

    pub fn phi(&self, dt: f64) -> DMatrix<f64> {
        iwp_phi(self.num_derivatives, dt)
    }

    pub fn sigma_sqrt(&self, dt: f64) -> DMatrix<f64> {
        let t = self.precondition(dt);
        DMatrix::from_diagonal(&t) * &self.sigma_sqrt_pre
    }

    pub fn sigma(&self, dt: f64) -> DMatrix<f64> {
        iwp_sigma(self.num_derivatives, dt)
    }
}

/// How the covariance of a `d`-dimensional problem is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factorization {
    /// Full `(L+1)d × (L+1)d` factor over the derivative-major stack.
    Dense,
    /// One `(L+1) × (L+1)` factor shared by all coordinates.
    Isotropic,
}

impl std::str::FromStr for Factorization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "isotropic" => Ok(Self::Isotropic),
            _ => Err(invalid(format!("unknown factorization '{s}'"))),
        }
    }
}

/// Layout of the derivative stack `𝔲 = [u, u′, …, u^(L)]`.
///
/// Dense means are `(L+1)d × 1` vectors in derivative-major order (entry
/// `k·d + i` is the `k`-th derivative of coordinate `i`). Isotropic means are
/// `(L+1) × d` matrices with one column per coordinate.
#[derive(Clone, Debug)]
pub struct StateStack {
    dim: usize,
    factorization: Factorization,
    transition: TransitionModel,
    phi_pre: DMatrix<f64>,
    sigma_sqrt_pre: DMatrix<f64>,
}

impl StateStack {
    pub fn new(num_derivatives: usize, dim: usize, factorization: Factorization) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let transition = TransitionModel::new(num_derivatives)?;
        let (phi_pre, sigma_sqrt_pre) = match factorization {
            Factorization::Dense => {
                let eye = DMatrix::identity(dim, dim);
                (
                    transition.phi_pre.kronecker(&eye),
                    transition.sigma_sqrt_pre.kronecker(&eye),
                )
            }
            Factorization::Isotropic => (
                transition.phi_pre.clone(),
                transition.sigma_sqrt_pre.clone(),
            ),
        };
        Ok(Self {
            dim,
            factorization,
            transition,
            phi_pre,
            sigma_sqrt_pre,
        })
    }

    pub fn num_derivatives(&self) -> usize {
        self.transition.num_derivatives
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factorization(&self) -> Factorization {
        self.factorization
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    /// Rows of the covariance factor.
    pub fn state_dim(&self) -> usize {
        match self.factorization {
            Factorization::Dense => (self.num_derivatives() + 1) * self.dim,
            Factorization::Isotropic => self.num_derivatives() + 1,
        }
    }

    /// Columns of the mean.
    pub fn mean_cols(&self) -> usize {
        match self.factorization {
            Factorization::Dense => 1,
            Factorization::Isotropic => self.dim,
        }
    }

    pub(crate) fn phi_pre(&self) -> &DMatrix<f64> {
        &self.phi_pre
    }

    pub(crate) fn sigma_sqrt_pre(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt_pre
    }

    /// Diagonal of the preconditioner expanded to the state layout.
    pub fn precondition_diag(&self, dt: f64) -> DVector<f64> {
        let t = self.transition.precondition(dt);
        match self.factorization {
            Factorization::Dense => {
                DVector::from_fn(self.state_dim(), |r, _| t[r / self.dim])
            }
            Factorization::Isotropic => t,
        }
    }

    pub fn mean_from_stack(&self, stack: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let n = self.num_derivatives() + 1;
        if stack.len() != n || stack.iter().any(|v| v.len() != self.dim) {
            return Err(invalid(format!(
                "expected {} derivative blocks of length {}",
                n, self.dim
            )));
        }
        Ok(match self.factorization {
            Factorization::Dense => {
                DMatrix::from_fn(n * self.dim, 1, |r, _| stack[r / self.dim][r % self.dim])
            }
            Factorization::Isotropic => DMatrix::from_fn(n, self.dim, |k, i| stack[k][i]),
        })
    }

    pub fn stack_from_mean(&self, mean: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..=self.num_derivatives())
            .map(|k| self.derivative(mean, k))
            .collect()
    }

    /// Block `k` (the `k`-th derivative of every coordinate).
    pub fn derivative(&self, mean: &DMatrix<f64>, k: usize) -> Vec<f64> {
        match self.factorization {
            Factorization::Dense => (0..self.dim).map(|i| mean[(k * self.dim + i, 0)]).collect(),
            Factorization::Isotropic => mean.row(k).iter().copied().collect(),
        }
    }

    /// Selector `E_k` with `E_k · mean` in residual shape.
    pub fn selector(&self, k: usize) -> DMatrix<f64> {
        match self.factorization {
            Factorization::Dense => {
                let mut e = DMatrix::zeros(self.dim, self.state_dim());
                for i in 0..self.dim {
                    e[(i, k * self.dim + i)] = 1.0;
                }
                e
            }
            Factorization::Isotropic => {
                let mut e = DMatrix::zeros(1, self.state_dim());
                e[(0, k)] = 1.0;
                e
            }
        }
    }

    /// A length-`d` vector in residual shape: `d × 1` (dense) or `1 × d`.
    pub fn residual_shape(&self, v: &[f64]) -> DMatrix<f64> {
        match self.factorization {
            Factorization::Dense => DMatrix::from_column_slice(v.len(), 1, v),
            Factorization::Isotropic => DMatrix::from_row_slice(1, v.len(), v),
        }
    }

    pub fn residual_values(&self, m: &DMatrix<f64>) -> Vec<f64> {
        match self.factorization {
            Factorization::Dense => m.column(0).iter().copied().collect(),
            Factorization::Isotropic => m.row(0).iter().copied().collect(),
        }
    }

    /// Flat derivative-major vector to this layout's mean.
    pub fn gather(&self, flat: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.num_derivatives() + 1;
        if flat.len() != n * self.dim {
            return Err(invalid("flat state has the wrong length"));
        }
        let stack: Vec<Vec<f64>> = flat.chunks(self.dim).map(<[f64]>::to_vec).collect();
        self.mean_from_stack(&stack)
    }

    /// This layout's mean to a flat derivative-major vector.
    pub fn scatter(&self, mean: &DMatrix<f64>) -> Vec<f64> {
        self.stack_from_mean(mean).concat()
    }

    /// Marginal standard deviations of `u` (block 0), one per coordinate.
    pub fn u_std(&self, g: &GaussianState) -> Vec<f64> {
        match self.factorization {
            Factorization::Dense => (0..self.dim)
                .map(|i| g.cov_sqrt.row(i).norm())
                .collect(),
            Factorization::Isotropic => vec![g.cov_sqrt.row(0).norm(); self.dim],
        }
    }

    /// The same distribution in the dense layout.
    pub fn to_dense(&self, g: &GaussianState) -> GaussianState {
        match self.factorization {
            Factorization::Dense => g.clone(),
            Factorization::Isotropic => {
                let flat = self.scatter(&g.mean);
                GaussianState {
                    mean: DMatrix::from_column_slice(flat.len(), 1, &flat),
                    cov_sqrt: g.cov_sqrt.kronecker(&DMatrix::identity(self.dim, self.dim)),
                }
            }
        }
    }
}

/// Exact derivative stack `[u(t0), u′(t0), …, u^(L)(t0)]`.
///
/// Uses the problem's user-supplied stack when present; otherwise runs
/// Taylor-mode differentiation of the vector field in jet arithmetic.
pub fn taylor_stack(problem: &OdeProblem, num_derivatives: usize) -> Result<Vec<Vec<f64>>> {
    check_order(num_derivatives)?;
    let k = problem.order;
    if num_derivatives < k {
        return Err(invalid(format!(
            "an order-{k} problem needs at least {k} derivatives, got {num_derivatives}"
        )));
    }
    let d = problem.dim;
    if let Some(stack) = &problem.initial_stack {
        let mut out: Vec<Vec<f64>> = stack.iter().take(num_derivatives + 1).cloned().collect();
        out.resize(num_derivatives + 1, vec![0.0; d]);
        return Ok(out);
    }
    // Normalized Taylor coefficients c_n = u^(n) / n!.
    let mut coeffs: Vec<Vec<f64>> = problem
        .initial
        .iter()
        .enumerate()
        .map(|(j, v)| v.iter().map(|x| x / factorial(j)).collect())
        .collect();
    for n in k..=num_derivatives {
        let m = n - k;
        let u_jets: Vec<Jet> = (0..d)
            .map(|i| Jet::new((0..=m).map(|j| coeff(&coeffs, j, i)).collect()))
            .collect();
        let du_jets: Vec<Jet> = if k == 2 {
            (0..d)
                .map(|i| {
                    Jet::new(
                        (0..=m)
                            .map(|j| (j + 1) as f64 * coeff(&coeffs, j + 1, i))
                            .collect(),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let f = problem.field.eval_jet(&u_jets, &du_jets).ok_or_else(|| {
            Error::UnsupportedProblem(
                "vector field has no jet implementation and no initial stack was supplied"
                    .into(),
            )
        })?;
        let scale = factorial(m) / factorial(n);
        coeffs.push(f.iter().map(|j| j.coeffs()[m] * scale).collect());
    }
    Ok(coeffs
        .into_iter()
        .enumerate()
        .map(|(n, c)| c.into_iter().map(|x| x * factorial(n)).collect())
        .collect())
}

fn coeff(coeffs: &[Vec<f64>], j: usize, i: usize) -> f64 {
    coeffs.get(j).map_or(0.0, |c| c[i])
}

/// Dirac state at the exact Taylor stack of the initial condition.
pub fn taylor_init(problem: &OdeProblem, stack: &StateStack) -> Result<GaussianState> {
    if problem.dim != stack.dim() {
        return Err(invalid("problem and state stack dimensions differ"));
    }
    let derivs = taylor_stack(problem, stack.num_derivatives())?;
    Ok(GaussianState::dirac(stack.mean_from_stack(&derivs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::VectorField;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use std::sync::Arc;

    #[test]
    fn transition_unit_step() {
        let (phi, sq) = iwp_transition(1, 1.0).unwrap();
        assert_relative_eq!(phi, dmatrix![1.0, 1.0; 0.0, 1.0]);
        assert_relative_eq!(
            &sq * sq.transpose(),
            dmatrix![1.0 / 3.0, 0.5; 0.5, 1.0],
            epsilon = 1e-14
        );
    }

    #[test]
    fn transition_l2_half_step() {
        let phi = iwp_phi(2, 0.5);
        let sigma = iwp_sigma(2, 0.5);
        assert_relative_eq!(phi[(0, 2)], 0.125);
        assert_relative_eq!(sigma[(2, 2)], 0.5);
        let (_, sq) = iwp_transition(2, 0.5).unwrap();
        assert_relative_eq!(&sq * sq.transpose(), sigma, epsilon = 1e-14);
    }

    #[test]
    fn transition_small_step_limit() {
        for l in 1..=5 {
            let (phi, sq) = iwp_transition(l, 1e-12).unwrap();
            assert_relative_eq!(phi, DMatrix::identity(l + 1, l + 1), epsilon = 1e-11);
            assert!(sq.iter().all(|x| x.abs() < 1e-5));
        }
    }

    #[test]
    fn transition_rejects_nonpositive_step() {
        assert!(iwp_transition(2, 0.0).is_err());
        assert!(iwp_transition(2, -1.0).is_err());
        assert!(iwp_transition(0, 1.0).is_err());
    }

    #[test]
    fn preconditioner_examples() {
        assert_relative_eq!(precondition(1, 1.0), DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(precondition(1, 4.0), DVector::from_vec(vec![8.0, 2.0]));
    }

    #[test]
    fn preconditioned_sigma_is_step_independent() {
        let l = 3;
        let reference = DMatrix::from_fn(4, 4, |i, j| 1.0 / (2 * l + 1 - i - j) as f64);
        for dt in [1e-6, 1e-3, 1.0] {
            let t = precondition(l, dt);
            let tinv = DMatrix::from_diagonal(&t.map(|x| 1.0 / x));
            let pre = &tinv * iwp_sigma(l, dt) * &tinv;
            assert_relative_eq!(pre, reference, epsilon = 1e-12, max_relative = 1e-12);
            let phi_pre = &tinv * iwp_phi(l, dt) * DMatrix::from_diagonal(&t);
            let model = TransitionModel::new(l).unwrap();
            assert_relative_eq!(&phi_pre, model.preconditioned_phi(), epsilon = 1e-12);
        }
    }

    struct Logistic;
    impl VectorField for Logistic {
        fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
            vec![u[0] * (1.0 - u[0])]
        }
        fn eval_jet(&self, u: &[Jet], _du: &[Jet]) -> Option<Vec<Jet>> {
            Some(vec![u[0].clone() * (-u[0].clone() + 1.0)])
        }
    }

    struct Opaque;
    impl VectorField for Opaque {
        fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
            vec![u[0].sin()]
        }
    }

    #[test]
    fn taylor_stack_of_logistic() {
        let p = OdeProblem::first_order(Arc::new(Logistic), vec![0.5], (0.0, 1.0)).unwrap();
        let s = taylor_stack(&p, 2).unwrap();
        assert_relative_eq!(s[0][0], 0.5);
        assert_relative_eq!(s[1][0], 0.25);
        assert_relative_eq!(s[2][0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn taylor_init_is_dirac() {
        let p = OdeProblem::first_order(Arc::new(Logistic), vec![0.5], (0.0, 1.0)).unwrap();
        let stack = StateStack::new(3, 1, Factorization::Dense).unwrap();
        let g = taylor_init(&p, &stack).unwrap();
        assert!(g.cov_sqrt.iter().all(|x| *x == 0.0));
        assert_eq!(g.mean.nrows(), 4);
    }

    #[test]
    fn opaque_field_needs_user_stack() {
        let p = OdeProblem::first_order(Arc::new(Opaque), vec![0.5], (0.0, 1.0)).unwrap();
        assert!(matches!(taylor_stack(&p, 2), Err(Error::UnsupportedProblem(_))));
        let p = p
            .with_initial_stack(vec![vec![0.5], vec![0.5_f64.sin()]])
            .unwrap();
        let s = taylor_stack(&p, 3).unwrap();
        assert_eq!(s.len(), 4);
        assert_relative_eq!(s[1][0], 0.5_f64.sin());
        assert_eq!(s[3][0], 0.0);
    }

    #[test]
    fn too_few_derivatives_for_second_order() {
        struct Osc;
        impl VectorField for Osc {
            fn eval(&self, u: &[f64], _du: &[f64]) -> Vec<f64> {
                vec![-u[0]]
            }
        }
        let p = OdeProblem::second_order(Arc::new(Osc), vec![1.0], vec![0.0], (0.0, 1.0)).unwrap();
        assert!(taylor_stack(&p, 1).is_err());
    }

    #[test]
    fn selectors_extract_blocks() {
        for fact in [Factorization::Dense, Factorization::Isotropic] {
            let s = StateStack::new(2, 3, fact).unwrap();
            let stack = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
            let mean = s.mean_from_stack(&stack).unwrap();
            for k in 0..3 {
                let e = s.selector(k) * &mean;
                assert_eq!(s.residual_values(&e), stack[k]);
                assert_eq!(s.derivative(&mean, k), stack[k]);
            }
            assert_eq!(s.stack_from_mean(&mean), stack);
        }
    }
}
