//! Affine approximations of the ODE residual `u^(k) − f(u, [u′])`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prior::{Factorization, StateStack};
use crate::problem::OdeProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linearization {
    /// Freeze `f` at the current mean.
    Ek0,
    /// First-order Taylor expansion of `f` around the current mean.
    Ek1,
}

impl std::str::FromStr for Linearization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ek0" => Ok(Self::Ek0),
            "ek1" => Ok(Self::Ek1),
            _ => Err(invalid(format!("unknown linearization '{s}'"))),
        }
    }
}

impl std::fmt::Display for Linearization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ek0 => "ek0",
            Self::Ek1 => "ek1",
        })
    }
}

/// Affine residual model `r(𝔲) ≈ H 𝔲 + b`.
#[derive(Clone, Debug)]
pub struct ResidualModel {
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ResidualModel {
    pub fn evaluate(&self, mean: &DMatrix<f64>) -> DMatrix<f64> {
        &self.h * mean + &self.b
    }
}

fn blocks(problem: &OdeProblem, stack: &StateStack, mean: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let u = stack.derivative(mean, 0);
    let du = if problem.order == 2 {
        stack.derivative(mean, 1)
    } else {
        Vec::new()
    };
    (u, du)
}

pub fn linearize_ek0(
    problem: &OdeProblem,
    stack: &StateStack,
    mean: &DMatrix<f64>,
) -> Result<ResidualModel> {
    check_layout(problem, stack)?;
    let (u, du) = blocks(problem, stack, mean);
    let f = problem.eval(&u, &du);
    let b = -stack.residual_shape(&f);
    Ok(ResidualModel {
        h: stack.selector(problem.order),
        b,
    })
}

pub fn linearize_ek1(
    problem: &OdeProblem,
    stack: &StateStack,
    mean: &DMatrix<f64>,
) -> Result<ResidualModel> {
    check_layout(problem, stack)?;
    if stack.factorization() != Factorization::Dense {
        return Err(Error::UnsupportedConfiguration(
            "first-order linearization requires the dense factorization".into(),
        ));
    }
    let (u, du) = blocks(problem, stack, mean);
    let jac = problem.field.jacobian(&u, &du).ok_or_else(|| {
        Error::UnsupportedConfiguration("first-order linearization needs a Jacobian".into())
    })?;
    let mut h = stack.selector(problem.order) - &jac.wrt_u * stack.selector(0);
    if problem.order == 2 {
        if let Some(jdu) = &jac.wrt_du {
            h -= jdu * stack.selector(1);
        }
    }
    let f = problem.eval(&u, &du);
    let exact: Vec<f64> = stack
        .derivative(mean, problem.order)
        .iter()
        .zip(&f)
        .map(|(a, b)| a - b)
        .collect();
    let b = stack.residual_shape(&exact) - &h * mean;
    Ok(ResidualModel { h, b })
}

pub fn linearize(
    kind: Linearization,
    problem: &OdeProblem,
    stack: &StateStack,
    mean: &DMatrix<f64>,
) -> Result<ResidualModel> {
    match kind {
        Linearization::Ek0 => linearize_ek0(problem, stack, mean),
        Linearization::Ek1 => linearize_ek1(problem, stack, mean),
    }
}

fn check_layout(problem: &OdeProblem, stack: &StateStack) -> Result<()> {
    if problem.dim != stack.dim() {
        return Err(invalid("problem and state stack dimensions differ"));
    }
    if stack.num_derivatives() < problem.order {
        return Err(invalid("not enough derivatives in the state stack"));
    }
    Ok(())
}
