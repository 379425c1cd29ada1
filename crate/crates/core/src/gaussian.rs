//! Square-root Gaussian algebra.
//!
//! Every covariance in this crate is stored through a lower-triangular factor
//! `L` with `cov = L Lᵀ`. Factors are only ever combined through QR
//! decompositions of stacked factors, so no dense covariance is formed on the
//! solver's hot path.
//!
//! Means are stored as `D × c` matrices. Each of the `c` columns is an
//! independent coordinate sharing the same `D × D` covariance factor. Dense
//! states use a single column; the isotropic factorization stores one column
//! per ODE coordinate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Gaussian `N(mean, cov_sqrt cov_sqrtᵀ ⊗ I_c)` in square-root form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: DMatrix<f64>,
    pub cov_sqrt: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DMatrix<f64>, cov_sqrt: DMatrix<f64>) -> Result<Self> {
        let d = mean.nrows();
        if cov_sqrt.nrows() != d || cov_sqrt.ncols() != d {
            return Err(invalid(format!(
                "mean has {} rows but cov_sqrt is {}x{}",
                d,
                cov_sqrt.nrows(),
                cov_sqrt.ncols()
            )));
        }
        if !is_lower_triangular(&cov_sqrt) {
            return Err(invalid("cov_sqrt must be lower triangular"));
        }
        Ok(Self { mean, cov_sqrt })
    }

    /// Point mass at `mean`, stored with an all-zero covariance factor.
    pub fn dirac(mean: DMatrix<f64>) -> Self {
        let d = mean.nrows();
        Self {
            mean,
            cov_sqrt: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.nrows()
    }

    /// Number of mean columns sharing the covariance.
    pub fn cols(&self) -> usize {
        self.mean.ncols()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_sqrt * self.cov_sqrt.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov_sqrt.iter()).all(|x| x.is_finite())
    }

    pub fn num_floats(&self) -> usize {
        self.mean.len() + triangular_len(self.dim())
    }
}

/// Affine Gaussian conditional `p(x | y) = N(x; A y + a, B Bᵀ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineConditional {
    pub linear: DMatrix<f64>,
    pub offset: DMatrix<f64>,
    pub noise_sqrt: DMatrix<f64>,
}

impl AffineConditional {
    pub fn new(
        linear: DMatrix<f64>,
        offset: DMatrix<f64>,
        noise_sqrt: DMatrix<f64>,
    ) -> Result<Self> {
        let d_out = linear.nrows();
        if offset.nrows() != d_out {
            return Err(invalid("offset rows must match linear rows"));
        }
        if noise_sqrt.nrows() != d_out || noise_sqrt.ncols() != d_out {
            return Err(invalid("noise_sqrt must be square with linear's row count"));
        }
        if !is_lower_triangular(&noise_sqrt) {
            return Err(invalid("noise_sqrt must be lower triangular"));
        }
        Ok(Self {
            linear,
            offset,
            noise_sqrt,
        })
    }

    /// `p(x | y) = δ(x − y)`: the zero-noise identity conditional.
    pub fn identity(dim: usize, cols: usize) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim),
            offset: DMatrix::zeros(dim, cols),
            noise_sqrt: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim_out(&self) -> usize {
        self.linear.nrows()
    }

    pub fn dim_in(&self) -> usize {
        self.linear.ncols()
    }

    /// The Gaussian obtained by fixing the conditioning variable to `y`.
    pub fn evaluate(&self, y: &DMatrix<f64>) -> Result<GaussianState> {
        if y.nrows() != self.dim_in() || y.ncols() != self.offset.ncols() {
            return Err(invalid("conditioning value has the wrong shape"));
        }
        Ok(GaussianState {
            mean: &self.linear * y + &self.offset,
            cov_sqrt: self.noise_sqrt.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.offset.iter())
            .chain(self.noise_sqrt.iter())
            .all(|x| x.is_finite())
    }

    pub fn num_floats(&self) -> usize {
        self.linear.len() + self.offset.len() + triangular_len(self.dim_out())
    }
}

pub(crate) fn triangular_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn is_lower_triangular(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| ((i + 1)..m.ncols()).all(|j| m[(i, j)] == 0.0))
}

/// Upper-triangular `R` of a QR decomposition, with rows flipped so that the
/// diagonal is nonnegative. Wide inputs are zero-padded to square first.
pub(crate) fn qr_upper(mut stacked: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = stacked.shape();
    if rows < cols {
        stacked = stacked.resize_vertically(cols, 0.0);
    }
    let mut r = stacked.qr().r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
        }
        // Householder QR leaves tiny nonzeros below the diagonal in some
        // builds; enforce exact triangularity.
        for j in 0..i.min(r.ncols()) {
            r[(i, j)] = 0.0;
        }
    }
    r
}

/// Lower-triangular `L` with `L Lᵀ = A (√D √Dᵀ) Aᵀ + √B √Bᵀ`.
///
/// Computed as the transposed R factor of `QR([√Dᵀ Aᵀ; √Bᵀ])`.
pub fn qr_sqrt_sum(
    a: &DMatrix<f64>,
    sqrt_d: &DMatrix<f64>,
    sqrt_b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, m) = a.shape();
    if sqrt_d.shape() != (m, m) || sqrt_b.shape() != (n, n) {
        return Err(invalid(format!(
            "qr_sqrt_sum: A is {n}x{m}, sqrt_d is {:?}, sqrt_b is {:?}",
            sqrt_d.shape(),
            sqrt_b.shape()
        )));
    }
    let mut stacked = DMatrix::zeros(m + n, n);
    stacked
        .rows_mut(0, m)
        .copy_from(&(sqrt_d.transpose() * a.transpose()));
    stacked.rows_mut(m, n).copy_from(&sqrt_b.transpose());
    let r = qr_upper(stacked);
    Ok(r.rows(0, n).transpose())
}

/// Blocks of the joint factorization used by both prediction and conditioning.
///
/// Decomposes `[[X, Y], [Z, 0]]` with `X: n×k`, `Y: n×D`, `Z: p×k` into
/// `R = [[R1, R12], [0, R2]]`. With `X = Lᵀ Hᵀ`, `Y = Lᵀ` and `Z = √Rᵀ` this
/// gives `S = R1ᵀ R1`, gain `K = R12ᵀ R1⁻ᵀ`, posterior factor `R2ᵀ`.
///
/// When `R1` is singular the QR factors are not unique and part of `Y`'s
/// variance can end up in `R12`. The rows of `R12` outside the range of `R1`
/// are then folded back into `R2`, and the gain uses the pseudo-inverse of
/// `R1`, which leaves unobservable directions untouched.
pub(crate) struct JointFactor {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    /// `Kᵀ = R1⁺ R12`.
    pub gain_t: DMatrix<f64>,
}

pub(crate) fn joint_qr(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: Option<&DMatrix<f64>>,
) -> JointFactor {
    let (n, k) = x.shape();
    let d = y.ncols();
    let p = z.map_or(0, |z| z.nrows());
    let mut stacked = DMatrix::zeros(n + p, k + d);
    stacked.view_mut((0, 0), (n, k)).copy_from(x);
    stacked.view_mut((0, k), (n, d)).copy_from(y);
    if let Some(z) = z {
        stacked.view_mut((n, 0), (p, k)).copy_from(z);
    }
    let r = qr_upper(stacked);
    let r1 = r.view((0, 0), (k, k)).into_owned();
    let r12 = r.view((0, k), (k, d)).into_owned();
    let r2 = r.view((k, k), (d, d)).into_owned();
    let tol = pivot_tolerance(&r1);
    if (0..k).all(|i| r1[(i, i)].abs() > tol) {
        let gain_t = solve_upper(&r1, &r12);
        return JointFactor { r1, r2, gain_t };
    }
    if r12.iter().all(|v| *v == 0.0) {
        return JointFactor {
            r1,
            r2,
            gain_t: DMatrix::zeros(k, d),
        };
    }
    let svd = r1.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let s_max = svd.singular_values.max();
    let s_tol = s_max * f64::EPSILON * k as f64;
    let mut gain_t = DMatrix::zeros(k, d);
    let mut residual = r12.clone();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > s_tol {
            let ui = u.column(i);
            let coeffs = ui.transpose() * &r12;
            gain_t += v_t.row(i).transpose() * &coeffs / *s;
            residual -= ui * coeffs;
        }
    }
    let mut fold = DMatrix::zeros(k + d, d);
    fold.rows_mut(0, k).copy_from(&residual);
    fold.rows_mut(k, d).copy_from(&r2);
    let r2 = qr_upper(fold).rows(0, d).into_owned();
    JointFactor { r1, r2, gain_t }
}

fn pivot_tolerance(r: &DMatrix<f64>) -> f64 {
    let max_diag = (0..r.nrows()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    max_diag * f64::EPSILON * (r.nrows().max(1) as f64)
}

/// Solves `R X = B` for upper-triangular `R`. Rows belonging to (numerically)
/// zero pivots are set to zero, which restricts the solve to the range of `R`.
pub(crate) fn solve_upper(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let tol = pivot_tolerance(r);
    let mut x = DMatrix::zeros(n, b.ncols());
    for col in 0..b.ncols() {
        for i in (0..n).rev() {
            let piv = r[(i, i)];
            if piv.abs() <= tol {
                continue;
            }
            let mut acc = b[(i, col)];
            for j in (i + 1)..n {
                acc -= r[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = acc / piv;
        }
    }
    x
}

/// Solves `Rᵀ X = B` for upper-triangular `R`, with the same pivot policy as
/// [`solve_upper`].
pub(crate) fn solve_upper_transposed(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let tol = pivot_tolerance(r);
    let mut x = DMatrix::zeros(n, b.ncols());
    for col in 0..b.ncols() {
        for i in 0..n {
            let piv = r[(i, i)];
            if piv.abs() <= tol {
                continue;
            }
            let mut acc = b[(i, col)];
            for j in 0..i {
                acc -= r[(j, i)] * x[(j, col)];
            }
            x[(i, col)] = acc / piv;
        }
    }
    x
}

/// Pushes a marginal through a conditional: `N(A m + a, A Σ Aᵀ + B)`.
pub fn marginalize(cond: &AffineConditional, g: &GaussianState) -> Result<GaussianState> {
    if cond.dim_in() != g.dim() || cond.offset.ncols() != g.cols() {
        return Err(invalid(format!(
            "marginalize: conditional expects {}x{} input, state is {}x{}",
            cond.dim_in(),
            cond.offset.ncols(),
            g.dim(),
            g.cols()
        )));
    }
    let mean = &cond.linear * &g.mean + &cond.offset;
    let cov_sqrt = qr_sqrt_sum(&cond.linear, &g.cov_sqrt, &cond.noise_sqrt)?;
    Ok(GaussianState { mean, cov_sqrt })
}

/// Integrates out the middle variable of `p(x | y) p(y | z)`.
///
/// With `outer = (A, a, √B)` and `inner = (C, c, √D)` the result is
/// `(A C, A c + a, √(A D Aᵀ + B))`. The inputs are consumed so their buffers
/// can be reused.
pub fn merge_conditionals(
    outer: AffineConditional,
    inner: AffineConditional,
) -> Result<AffineConditional> {
    if outer.dim_in() != inner.dim_out() || outer.offset.ncols() != inner.offset.ncols() {
        return Err(invalid(format!(
            "merge_conditionals: outer expects {} inputs, inner produces {}",
            outer.dim_in(),
            inner.dim_out()
        )));
    }
    let noise_sqrt = qr_sqrt_sum(&outer.linear, &inner.noise_sqrt, &outer.noise_sqrt)?;
    let AffineConditional {
        linear: a,
        offset: mut a_off,
        ..
    } = outer;
    a_off.gemm(1.0, &a, &inner.offset, 1.0);
    Ok(AffineConditional {
        linear: a * inner.linear,
        offset: a_off,
        noise_sqrt,
    })
}

/// Conditions `prior` on the noise-free affine observation `H x + b = 0`.
///
/// Returns the posterior together with the conditional of the state given
/// the observed quantity `y = H x + b`, parametrized as
/// `(gain, posterior mean, posterior factor)`; evaluating it at `y = 0`
/// reproduces the posterior.
///
/// If the innovation covariance `H Σ Hᵀ` is singular, the directions it does
/// not span are left unobserved: the gain is zero there.
pub fn condition_affine(
    prior: &GaussianState,
    h: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(GaussianState, AffineConditional)> {
    let d = prior.dim();
    if h.ncols() != d || b.nrows() != h.nrows() || b.ncols() != prior.cols() {
        return Err(invalid(format!(
            "condition_affine: H is {:?}, b is {:?}, state is {}x{}",
            h.shape(),
            b.shape(),
            d,
            prior.cols()
        )));
    }
    let lt = prior.cov_sqrt.transpose();
    let f = joint_qr(&(&lt * h.transpose()), &lt, None);
    let residual = h * &prior.mean + b;
    let gain = f.gain_t.transpose();
    let mean = &prior.mean - &gain * residual;
    let cov_sqrt = f.r2.transpose();
    let backward = AffineConditional {
        linear: gain,
        offset: mean.clone(),
        noise_sqrt: cov_sqrt.clone(),
    };
    Ok((GaussianState { mean, cov_sqrt }, backward))
}

/// `mean + cov_sqrt · noise`.
pub fn sample(g: &GaussianState, noise: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if noise.shape() != g.mean.shape() {
        return Err(invalid("noise must have the shape of the mean"));
    }
    Ok(&g.mean + &g.cov_sqrt * noise)
}
