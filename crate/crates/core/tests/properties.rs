use nalgebra::DMatrix;
use probode::fixedpoint::equispaced_targets;
use probode::gaussian::is_lower_triangular;
use probode::oracle::solve_store_everything;
use probode::prior::{iwp_phi, iwp_sigma};
use probode::problems;
use probode::stepping::Calibration;
use probode::{
    condition_affine, linearize, merge_conditionals, qr_sqrt_sum, solve_targets_with, taylor_init,
    AffineConditional, Factorization, GaussianState, Linearization, Solver, SolverConfig,
    StateStack,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn lower(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|m| m.lower_triangle())
}

fn conditional(d_out: usize, d_in: usize) -> impl Strategy<Value = AffineConditional> {
    (matrix(d_out, d_in), matrix(d_out, 1), lower(d_out))
        .prop_map(|(a, o, s)| AffineConditional::new(a, o, s).unwrap())
}

fn chain3() -> impl Strategy<Value = (AffineConditional, AffineConditional, AffineConditional)> {
    (1..6usize, 1..6usize, 1..6usize, 1..6usize).prop_flat_map(|(a, b, c, d)| {
        (conditional(a, b), conditional(b, c), conditional(c, d))
    })
}

fn noise_cov(c: &AffineConditional) -> DMatrix<f64> {
    &c.noise_sqrt * c.noise_sqrt.transpose()
}

fn valid_factor(l: &DMatrix<f64>) -> bool {
    is_lower_triangular(l) && l.diagonal().iter().all(|x| *x >= 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merge_matches_dense_composition((outer, inner, _) in chain3()) {
        let (a, c) = (outer.linear.clone(), inner.linear.clone());
        let offset = &a * &inner.offset + &outer.offset;
        let cov = &a * noise_cov(&inner) * a.transpose() + noise_cov(&outer);
        let merged = merge_conditionals(outer, inner).unwrap();
        prop_assert!(valid_factor(&merged.noise_sqrt));
        prop_assert!((&merged.linear - &a * c).amax() <= 1e-12);
        prop_assert!((&merged.offset - offset).amax() <= 1e-12 * (1.0 + merged.offset.amax()));
        prop_assert!((noise_cov(&merged) - cov).amax() <= 1e-10);
    }

    #[test]
    fn merge_is_associative((r1, r2, r3) in chain3()) {
        let left = merge_conditionals(
            merge_conditionals(r1.clone(), r2.clone()).unwrap(),
            r3.clone(),
        )
        .unwrap();
        let right = merge_conditionals(r1, merge_conditionals(r2, r3).unwrap()).unwrap();
        prop_assert!((&left.linear - &right.linear).amax() <= 1e-10);
        prop_assert!((&left.offset - &right.offset).amax() <= 1e-10);
        prop_assert!((noise_cov(&left) - noise_cov(&right)).amax() <= 1e-10);
    }

    #[test]
    fn qr_sqrt_sum_reproduces_dense_sum(
        (a, sd, sb) in (1..8usize, 1..8usize)
            .prop_flat_map(|(n, m)| (matrix(n, m), lower(m), lower(n)))
    ) {
        let l = qr_sqrt_sum(&a, &sd, &sb).unwrap();
        let dense = &a * &sd * sd.transpose() * a.transpose() + &sb * sb.transpose();
        prop_assert!(valid_factor(&l));
        prop_assert!((&l * l.transpose() - dense).amax() <= 1e-12);
    }

    #[test]
    fn conditioning_zeroes_observed_variance(
        (mean, sqrt, h, b) in (2..7usize, 1..3usize).prop_flat_map(|(n, k)| {
            (matrix(n, 1), lower(n), matrix(k.min(n), n), matrix(k.min(n), 1))
        })
    ) {
        // Keep the prior full rank so H has full row rank in the prior's range.
        let n = sqrt.nrows();
        let sqrt = sqrt + DMatrix::identity(n, n) * 2.0;
        let prior = GaussianState::new(mean, sqrt).unwrap();
        let (post, _) = condition_affine(&prior, &h, &b).unwrap();
        prop_assert!(valid_factor(&post.cov_sqrt));
        let cov = post.covariance();
        prop_assert!(cov.clone().symmetric_eigenvalues().iter().all(|e| *e >= -1e-12));
        prop_assert!((&h * &cov * h.transpose()).amax() <= 1e-10 * (1.0 + prior.covariance().amax()));
        prop_assert!((&h * &post.mean + &b).amax() <= 1e-10);
    }

    #[test]
    fn transition_semigroup(l in 0..6usize, dt1 in 1e-3..2.0f64, dt2 in 1e-3..2.0f64) {
        let phi12 = iwp_phi(l, dt1 + dt2);
        let phi = iwp_phi(l, dt2) * iwp_phi(l, dt1);
        prop_assert!((&phi12 - &phi).amax() <= 1e-10 * phi12.amax());
        let sigma12 = iwp_sigma(l, dt1 + dt2);
        let p2 = iwp_phi(l, dt2);
        let sigma = &p2 * iwp_sigma(l, dt1) * p2.transpose() + iwp_sigma(l, dt2);
        prop_assert!((&sigma12 - &sigma).amax() <= 1e-10 * sigma12.amax());
    }

    #[test]
    fn transition_reproduces_polynomials(
        l in 0..6usize,
        coeffs in prop::collection::vec(-2.0..2.0f64, 6),
        t in -1.0..1.0f64,
        dt in 0.0..1.5f64,
    ) {
        // Taylor stack of p(x) = Σ c_j x^j at x.
        let stack = |x: f64| -> Vec<f64> {
            (0..=l)
                .map(|k| {
                    (k..=l)
                        .map(|j| {
                            let falling: f64 = ((j - k + 1)..=j).map(|v| v as f64).product();
                            coeffs[j] * falling * x.powi((j - k) as i32)
                        })
                        .sum()
                })
                .collect()
        };
        let shifted = iwp_phi(l, dt) * nalgebra::DVector::from_vec(stack(t));
        for (a, b) in shifted.iter().zip(stack(t + dt)) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn isotropic_layout_round_trips(
        (l, d, flat) in (1..5usize, 1..5usize)
            .prop_flat_map(|(l, d)| (Just(l), Just(d), prop::collection::vec(-5.0..5.0f64, (l + 1) * d)))
    ) {
        for f in [Factorization::Dense, Factorization::Isotropic] {
            let stack = StateStack::new(l, d, f).unwrap();
            let mean = stack.gather(&flat).unwrap();
            prop_assert_eq!(stack.scatter(&mean), flat.clone());
            for k in 0..=l {
                prop_assert_eq!(stack.derivative(&mean, k), flat[k * d..(k + 1) * d].to_vec());
            }
        }
    }

    #[test]
    fn linearizations_reproduce_the_residual(
        mean in prop::collection::vec(-2.0..2.0f64, 15),
    ) {
        let p = problems::rigid_body().problem;
        let stack = StateStack::new(4, 3, Factorization::Dense).unwrap();
        let m = stack.gather(&mean).unwrap();
        let u = stack.derivative(&m, 0);
        let exact: Vec<f64> = stack
            .derivative(&m, 1)
            .iter()
            .zip(p.eval(&u, &[]))
            .map(|(a, b)| a - b)
            .collect();
        for kind in [Linearization::Ek0, Linearization::Ek1] {
            let model = linearize(kind, &p, &stack, &m).unwrap();
            let r = model.evaluate(&m);
            for (a, b) in stack.residual_values(&r).iter().zip(&exact) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn ek1_is_state_independent_for_affine_fields(
        x in prop::collection::vec(-2.0..2.0f64, 6),
        y in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -0.3]);
        let p = problems::affine(m, vec![0.3, -0.1], vec![1.0, 1.0], (0.0, 1.0)).unwrap();
        let stack = StateStack::new(2, 2, Factorization::Dense).unwrap();
        let a = linearize(Linearization::Ek1, &p, &stack, &stack.gather(&x).unwrap()).unwrap();
        let b = linearize(Linearization::Ek1, &p, &stack, &stack.gather(&y).unwrap()).unwrap();
        prop_assert!((&a.h - &b.h).amax() <= 1e-14);
        prop_assert!((&a.b - &b.b).amax() <= 1e-14);
    }
}

#[test]
fn taylor_init_matches_divided_differences() {
    // Logistic: u′ = u(1 − u), so u″ = u′(1 − 2u); compare against finite
    // differences of the closed form.
    let bp = problems::logistic();
    let stack = StateStack::new(3, 1, Factorization::Dense).unwrap();
    let init = taylor_init(&bp.problem, &stack).unwrap();
    let u = |t: f64| bp.reference(&[t]).unwrap()[0][0];
    let h = 1e-4;
    let d1 = (u(h) - u(0.0)) / h;
    let d2 = (u(2.0 * h) - 2.0 * u(h) + u(0.0)) / (h * h);
    let taylor = stack.scatter(&init.mean);
    assert!((taylor[1] - d1).abs() <= 10.0 * h);
    assert!((taylor[2] - d2).abs() <= 10.0 * h);
    assert!(init.cov_sqrt.iter().all(|x| *x == 0.0));
}

fn grid_of(tol: f64) -> Vec<f64> {
    let p = problems::logistic().problem;
    let cfg = SolverConfig::new(3).with_tolerances(tol, tol * 1e-3);
    solve_store_everything(&mut Solver::new(&p, &cfg).unwrap())
        .unwrap()
        .times
}

#[test]
fn compute_grids_are_reproducible() {
    assert_eq!(grid_of(1e-6), grid_of(1e-6));
}

#[test]
fn looser_tolerance_takes_no_more_steps() {
    for tol in [1e-9, 1e-7, 1e-5] {
        assert!(grid_of(tol * 10.0).len() <= grid_of(tol).len());
    }
}

#[test]
fn logistic_error_decreases_with_tolerance() {
    let bp = problems::logistic();
    let t_end = bp.problem.t_end;
    let exact = bp.reference(&[t_end]).unwrap()[0][0];
    let mut errs = Vec::new();
    let mut tol = 1e-2;
    while tol >= 1e-10 {
        let cfg = bp.config().with_tolerances(tol, tol * 1e-3);
        let sol = solve_targets_with(
            &mut Solver::new(&bp.problem, &cfg).unwrap(),
            &[bp.problem.t0, t_end],
        )
        .unwrap();
        errs.push((sol.u_means().unwrap()[1][0] - exact).abs());
        tol /= 2.0;
    }
    let inversions = errs.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{inversions} inversions: {errs:?}");
}

#[test]
fn target_grid_does_not_change_compute_grid() {
    let bp = problems::rigid_body();
    let cfg = bp.config().with_tolerances(1e-6, 1e-9);
    let mut plain = Solver::new(&bp.problem, &cfg).unwrap().with_step_trace();
    solve_store_everything(&mut plain).unwrap();
    let mut targeted = Solver::new(&bp.problem, &cfg).unwrap().with_step_trace();
    solve_targets_with(&mut targeted, &equispaced_targets(&bp.problem, 37)).unwrap();
    assert_eq!(plain.step_trace(), targeted.step_trace());
}

#[test]
fn target_storage_is_bounded_independently_of_steps() {
    let bp = problems::rigid_body();
    let targets = equispaced_targets(&bp.problem, 5);
    let d = 15;
    let bound = 5 * (d * d + d + d * (d + 1) / 2) + 2 * (d + d * (d + 1) / 2) + 16 + targets.len();
    for tol in [1e-3, 1e-9] {
        let cfg = bp.config().with_tolerances(tol, tol * 1e-3);
        let sol = solve_targets_with(&mut Solver::new(&bp.problem, &cfg).unwrap(), &targets).unwrap();
        assert!(sol.stored_floats() <= bound, "{} > {bound}", sol.stored_floats());
    }
}

/// Forward pass on a fixed grid versus a dense Kalman filter.
#[test]
fn affine_filter_matches_dense_kalman_filter() {
    let m = DMatrix::from_row_slice(2, 2, &[-0.4, 1.0, -1.0, -0.2]);
    let c = [0.2, 0.1];
    let p = problems::affine(m.clone(), c.to_vec(), vec![1.0, -0.5], (0.0, 3.0)).unwrap();
    let l = 3;
    let cfg = SolverConfig::new(l)
        .with_linearization(Linearization::Ek1)
        .with_calibration(Calibration::None);
    let grid: Vec<f64> = (0..=30).map(|i| 3.0 * (i as f64 / 30.0).powi(2)).collect();
    let mut solver = Solver::new(&p, &cfg).unwrap().with_fixed_grid(grid.clone()).unwrap();
    let sol = solve_store_everything(&mut solver).unwrap();

    let n = (l + 1) * 2;
    let mut h = DMatrix::zeros(2, n);
    h.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    h.view_mut((0, 0), (2, 2)).copy_from(&(-&m));
    let b = -DMatrix::from_column_slice(2, 1, &c);
    let update = |mean: &DMatrix<f64>, cov: &DMatrix<f64>| {
        let s = &h * cov * h.transpose();
        let gain = cov * h.transpose() * s.try_inverse().unwrap();
        let mean = mean - &gain * (&h * mean + &b);
        let cov = cov - &gain * &h * cov;
        (mean, cov)
    };
    let first = &sol.filtered[0];
    let (mut mean, mut cov) = (first.mean.clone(), first.covariance());
    let eye = DMatrix::<f64>::identity(2, 2);
    for k in 1..grid.len() {
        let dt = grid[k] - grid[k - 1];
        let phi = iwp_phi(l, dt).kronecker(&eye);
        let sigma = iwp_sigma(l, dt).kronecker(&eye);
        (mean, cov) = update(&(&phi * &mean), &(&phi * &cov * phi.transpose() + sigma));
        let g = &sol.filtered[k];
        assert!((&g.mean - &mean).amax() <= 1e-10, "mean at step {k}");
        assert!((g.covariance() - &cov).amax() <= 1e-8, "covariance at step {k}");
    }
}
