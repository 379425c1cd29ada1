//! Truncated Taylor polynomials ("jets") for Taylor-mode initialization.
//!
//! A [`Jet`] of degree `n` stores normalized Taylor coefficients
//! `c_k = x^(k)(t0) / k!` for `k = 0..=n`. Arithmetic propagates all
//! coefficients exactly up to the truncation degree.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type a vector field can be written against so that the same code
/// evaluates on `f64` and on [`Jet`].
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn powf(&self, exponent: f64) -> Self;

    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }

    /// A constant of the same shape as `self`.
    fn constant_like(&self, value: f64) -> Self;
}

impl Real for f64 {
    fn powf(&self, exponent: f64) -> Self {
        f64::powf(*self, exponent)
    }

    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }

    fn constant_like(&self, value: f64) -> Self {
        value
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a jet needs at least one coefficient");
        Self { coeffs }
    }

    pub fn constant(value: f64, degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[0] = value;
        Self { coeffs }
    }

    /// The jet of `t ↦ value + (t − t0)`.
    pub fn variable(value: f64, degree: usize) -> Self {
        let mut j = Self::constant(value, degree);
        if degree >= 1 {
            j.coeffs[1] = 1.0;
        }
        j
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `k`-th derivative at the expansion point, `k! c_k`.
    pub fn derivative(&self, k: usize) -> f64 {
        self.coeffs[k] * factorial(k)
    }

    /// Time derivative of the polynomial, truncated to the same degree.
    pub fn differentiate(&self) -> Self {
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        for k in 0..n - 1 {
            out[k] = (k + 1) as f64 * self.coeffs[k + 1];
        }
        Self { coeffs: out }
    }

    fn check(&self, other: &Self) {
        assert_eq!(
            self.coeffs.len(),
            other.coeffs.len(),
            "jets of different degree"
        );
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.check(&rhs);
        self.coeffs.iter_mut().zip(&rhs.coeffs).for_each(|(a, b)| *a += b);
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        self.check(&rhs);
        self.coeffs.iter_mut().zip(&rhs.coeffs).for_each(|(a, b)| *a -= b);
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.check(&rhs);
        let n = self.coeffs.len();
        let coeffs = (0..n)
            .map(|k| (0..=k).map(|j| self.coeffs[j] * rhs.coeffs[k - j]).sum())
            .collect();
        Jet { coeffs }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self.check(&rhs);
        let n = self.coeffs.len();
        let v0 = rhs.coeffs[0];
        let mut w = vec![0.0; n];
        for k in 0..n {
            let acc: f64 = (1..=k).map(|j| rhs.coeffs[j] * w[k - j]).sum();
            w[k] = (self.coeffs[k] - acc) / v0;
        }
        Jet { coeffs: w }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.coeffs[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.coeffs[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(mut self, rhs: f64) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c /= rhs);
        self
    }
}

impl Real for Jet {
    /// `w = u^a` via `k u0 w_k = Σ_{j=1..k} ((a + 1) j − k) u_j w_{k−j}`.
    fn powf(&self, exponent: f64) -> Self {
        let u = &self.coeffs;
        let n = u.len();
        let mut w = vec![0.0; n];
        w[0] = u[0].powf(exponent);
        for k in 1..n {
            let acc: f64 = (1..=k)
                .map(|j| ((exponent + 1.0) * j as f64 - k as f64) * u[j] * w[k - j])
                .sum();
            w[k] = acc / (k as f64 * u[0]);
        }
        Jet { coeffs: w }
    }

    fn constant_like(&self, value: f64) -> Self {
        Jet::constant(value, self.degree())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_of_polynomials() {
        // (1 + t)(2 - t) = 2 + t - t^2
        let a = Jet::new(vec![1.0, 1.0, 0.0, 0.0]);
        let b = Jet::new(vec![2.0, -1.0, 0.0, 0.0]);
        assert_eq!((a * b).coeffs(), &[2.0, 1.0, -1.0, 0.0]);
    }

    #[test]
    fn quotient_matches_geometric_series() {
        // 1 / (1 - t) = 1 + t + t^2 + ...
        let one = Jet::constant(1.0, 5);
        let den = Jet::new(vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        for c in (one / den).coeffs() {
            assert_relative_eq!(*c, 1.0);
        }
    }

    #[test]
    fn power_matches_binomial_series() {
        // (1 + t)^a has coefficients binom(a, k)
        let a = -1.5;
        let x = Jet::variable(1.0, 6);
        let p = x.powf(a);
        let mut binom = 1.0;
        for (k, c) in p.coeffs().iter().enumerate() {
            assert_relative_eq!(*c, binom, epsilon = 1e-12);
            binom *= (a - k as f64) / (k as f64 + 1.0);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let x = Jet::new(vec![4.0, 1.0, -0.5, 0.25]);
        let s = x.sqrt();
        let back = s.clone() * s;
        for (a, b) in back.coeffs().iter().zip(x.coeffs()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_and_differentiate() {
        let x = Jet::new(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.derivative(3), 24.0);
        assert_eq!(x.differentiate().coeffs(), &[2.0, 6.0, 12.0, 0.0]);
    }
}
