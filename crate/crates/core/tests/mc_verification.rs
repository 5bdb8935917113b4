//! Monte Carlo estimators against closed forms, duality behavior of
//! kernel tilts, and the convergence diagnostics, at desk scale.

mod common;

use common::*;
use nalgebra::{dmatrix, dvector};
use omt_core::kernel::{optimal_kernel, KernelSpec};
use omt_core::model::{DiscreteMeasure, JumpSpecQuadratic, ModelSpec, PriceModelSpec};
use omt_core::pricing::{bond_price, futures_price};
use omt_core::riccati::{solve_bond, TimeGrid};
use omt_core::simulate::{
    mc_bond_price, mc_futures_price, reweight, simulate, McEstimate,
};
use omt_core::verify::{
    density_identity_check, duality_check, entropy_estimate, fbsde_residual_check, omt_objective,
};

fn x0() -> nalgebra::DVector<f64> {
    dvector![VASICEK_X0]
}

#[test]
fn mc_bond_price_within_error_of_closed_form() {
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let e = simulate(&spec, &x0(), &grid, 20_000, 101, &KernelSpec::Zero).unwrap();
    let est = mc_bond_price(&e);
    let cf = bond_price(&spec, 0.0, 1.0, &x0(), &grid).unwrap().value;
    assert!(
        (est.mean - cf).abs() <= 4.0 * est.std_error,
        "mc {} cf {} se {}",
        est.mean,
        cf,
        est.std_error
    );
}

#[test]
fn weak_convergence_under_grid_refinement() {
    // median absolute error over 5 seeds shrinks when dt is halved; the
    // start state sits far from the reversion level so the left-point
    // discretization bias dominates the MC noise on coarse grids
    let spec = vasicek_model();
    let start = dvector![0.20];
    let cf = {
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        bond_price(&spec, 0.0, 1.0, &start, &grid).unwrap().value
    };
    let median_err = |steps: usize| -> f64 {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let mut errs: Vec<f64> = (0..5u64)
            .map(|s| {
                let e = simulate(&spec, &start, &grid, 4000, 7000 + s, &KernelSpec::Zero).unwrap();
                (mc_bond_price(&e).mean - cf).abs()
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        errs[2]
    };
    let coarse = median_err(4);
    let fine = median_err(8);
    assert!(
        fine < coarse,
        "median error did not shrink: {coarse:e} -> {fine:e}"
    );
}

#[test]
fn entropy_of_optimal_kernel_matches_quadrature_oracle() {
    // beta = 0 makes Z deterministic: H = 1/2 int U_s^2 sigma^2 ds
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let sol = solve_bond(&spec, &grid).unwrap();
    let kernel = optimal_kernel(&sol, &spec).unwrap();
    let est = entropy_estimate(&spec, &x0(), &kernel, &grid, 8000, 103).unwrap();
    // left-point quadrature of the deterministic integrand, matching the
    // simulator's accumulation rule
    let u_nodes: Vec<f64> = match &sol {
        omt_core::riccati::RiccatiSolution::Affine(a) => a.u.iter().map(|u| u[0]).collect(),
        _ => unreachable!(),
    };
    let dt = grid.dt();
    let oracle: f64 = u_nodes[..grid.steps]
        .iter()
        .map(|u| 0.5 * (u * VASICEK_SIGMA) * (u * VASICEK_SIGMA) * dt)
        .sum();
    assert!(
        (est.mean - oracle).abs() <= 3.0 * est.std_error.max(1e-12),
        "H {} oracle {} se {}",
        est.mean,
        oracle,
        est.std_error
    );
}

#[test]
fn duality_gaps_nonnegative_and_optimal_attains() {
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let sol = solve_bond(&spec, &grid).unwrap();
    let kernels = vec![
        KernelSpec::Zero,
        KernelSpec::Constant(dvector![0.3]),
        KernelSpec::Constant(dvector![-0.3]),
        KernelSpec::AffineInState {
            offset: dvector![0.125],
            slope: dmatrix![-0.5],
        },
        optimal_kernel(&sol, &spec).unwrap(),
    ];
    let report = duality_check(&spec, &x0(), &kernels, &grid, 20_000, 104).unwrap();
    assert!(report.passed(), "{report:#?}");
    // constant kernels pay at least their entropy in objective
    let zero_gap = report.rows[0].gap;
    let const_gap = report.rows[1].gap;
    assert!(const_gap > zero_gap);
    // zero-kernel gap is strictly positive here (Jensen):
    assert!(zero_gap > 3.0 * report.rows[0].gap_std_error);
}

#[test]
fn objective_jensen_inequality_zero_kernel() {
    // J(0) = E_P[int r] >= V
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let est = omt_objective(&spec, &x0(), &KernelSpec::Zero, &grid, 20_000, 105).unwrap();
    let v = -bond_price(&spec, 0.0, 1.0, &x0(), &grid)
        .unwrap()
        .value
        .ln();
    assert!(est.mean - v >= -3.0 * est.std_error);
}

#[test]
fn optimal_tilt_reduces_estimator_variance() {
    // importance sampling under the optimal kernel: same estimand, far
    // smaller variance than the plain estimator under P
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let sol = solve_bond(&spec, &grid).unwrap();
    let kernel = optimal_kernel(&sol, &spec).unwrap();

    let under_p = simulate(&spec, &x0(), &grid, 8000, 106, &KernelSpec::Zero).unwrap();
    let plain = mc_bond_price(&under_p);

    let tilted = simulate(&spec, &x0(), &grid, 8000, 106, &kernel).unwrap();
    let payoff: Vec<f64> = tilted
        .rate_integrals
        .iter()
        .map(|ri| (-ri).exp())
        .collect();
    let is = reweight(&tilted, &payoff);

    let cf = bond_price(&spec, 0.0, 1.0, &x0(), &grid).unwrap().value;
    assert!((is.under_p.mean - cf).abs() <= 4.0 * is.under_p.std_error.max(1e-9));
    assert!(
        is.under_p.std_error < 0.1 * plain.std_error,
        "tilted se {} vs plain se {}",
        is.under_p.std_error,
        plain.std_error
    );
}

#[test]
fn tilted_jump_ensemble_weights_are_a_density() {
    // optimal kernel on the jump fixture: E_Q[e^{-log rn}] = 1
    let grid = TimeGrid::new(0.0, 1.0, 500).unwrap();
    let spec = ModelSpec::Affine(jump_vasicek());
    let sol = solve_bond(&spec, &grid).unwrap();
    let kernel = optimal_kernel(&sol, &spec).unwrap();
    let e = simulate(&spec, &x0(), &grid, 20_000, 107, &kernel).unwrap();
    let ones = vec![1.0; e.n_paths];
    let est = reweight(&e, &ones);
    assert!(
        (est.under_p.mean - 1.0).abs() <= 4.0 * est.under_p.std_error,
        "martingale mean {} se {}",
        est.under_p.mean,
        est.under_p.std_error
    );
    // and the importance-sampled bond price matches the closed form
    let payoff: Vec<f64> = e.rate_integrals.iter().map(|ri| (-ri).exp()).collect();
    let is = reweight(&e, &payoff);
    let cf = sol.log_price(0.0, &x0()).exp();
    assert!(
        (is.under_p.mean - cf).abs() <= 4.0 * is.under_p.std_error.max(1e-9),
        "is {} cf {}",
        is.under_p.mean,
        cf
    );
}

#[test]
fn jump_qtsm_mc_matches_closed_form() {
    let mut spec = qtsm2();
    spec.jump = Some(JumpSpecQuadratic {
        intensity_quad: dmatrix![0.5, 0.0; 0.0, 0.2],
        intensity_slope: dvector![0.1, 0.05],
        intensity_const: 0.05,
        measure: DiscreteMeasure::new(
            vec![dvector![0.02, -0.01], dvector![-0.01, 0.02]],
            vec![1.0, 0.5],
        ),
    });
    let model = ModelSpec::Quadratic(spec);
    let grid = TimeGrid::new(0.0, 1.0, 500).unwrap();
    let x = qtsm2_x0();
    let cf = solve_bond(&model, &grid).unwrap().log_price(0.0, &x).exp();
    let e = simulate(&model, &x, &grid, 20_000, 109, &KernelSpec::Zero).unwrap();
    let est = mc_bond_price(&e);
    assert!(
        (est.mean - cf).abs() <= 4.0 * est.std_error,
        "mc {} cf {} se {}",
        est.mean,
        cf,
        est.std_error
    );
}

#[test]
fn futures_mc_agrees_with_closed_form() {
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let spec = vasicek_model();
    let pm = PriceModelSpec::Apm {
        a_t: dvector![1.0],
        h_t: 0.0,
    };
    let cf = futures_price(&spec, &pm, 0.0, 1.0, &x0(), &grid).unwrap().value;
    let e = simulate(&spec, &x0(), &grid, 20_000, 110, &KernelSpec::Zero).unwrap();
    let est = mc_futures_price(&e, &pm);
    assert!((est.mean - cf).abs() <= 4.0 * est.std_error);
}

#[test]
fn qpm_futures_on_quadratic_factor_matches_mc() {
    let spec = ModelSpec::Quadratic(qtsm2());
    let x = qtsm2_x0();
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let pm = PriceModelSpec::Qpm {
        b_t: dmatrix![0.5, 0.0; 0.0, 0.2],
        a_t: dvector![1.0, -0.5],
        h_t: 0.05,
    };
    let cf = futures_price(&spec, &pm, 0.0, 1.0, &x, &grid).unwrap().value;
    let e = simulate(&spec, &x, &grid, 20_000, 115, &KernelSpec::Zero).unwrap();
    let est = mc_futures_price(&e, &pm);
    assert!(
        (est.mean - cf).abs() <= 4.0 * est.std_error,
        "mc {} cf {} se {}",
        est.mean,
        cf,
        est.std_error
    );
}

#[test]
fn qpm_forward_on_quadratic_factor_matches_mc() {
    use omt_core::pricing::forward_price;
    let spec = ModelSpec::Quadratic(qtsm2());
    let x = qtsm2_x0();
    let grid = TimeGrid::new(0.0, 1.0, 250).unwrap();
    let pm = PriceModelSpec::Qpm {
        b_t: dmatrix![0.5, 0.0; 0.0, 0.2],
        a_t: dvector![1.0, -0.5],
        h_t: 0.05,
    };
    let fwd = forward_price(&spec, &pm, 0.0, 1.0, &x, &grid).unwrap();
    let n_cf = (-fwd.value_function).exp();
    let e = simulate(&spec, &x, &grid, 20_000, 116, &KernelSpec::Zero).unwrap();
    let est = omt_core::simulate::mc_forward_numerator(&e, &pm);
    assert!(
        (est.mean - n_cf).abs() <= 4.0 * est.std_error,
        "mc {} cf {} se {}",
        est.mean,
        n_cf,
        est.std_error
    );
}

#[test]
fn density_discrepancy_shrinks_under_refinement() {
    // affine fixtures converge at first order in this metric; assert a
    // clear decrease and the documented order window on the Vasicek fixture
    let spec = vasicek_model();
    let coarse = density_identity_check(
        &spec,
        &x0(),
        &TimeGrid::new(0.0, 1.0, 100).unwrap(),
        4000,
        111,
    )
    .unwrap();
    let fine = density_identity_check(
        &spec,
        &x0(),
        &TimeGrid::new(0.0, 1.0, 400).unwrap(),
        4000,
        111,
    )
    .unwrap();
    let ratio = fine.median_abs / coarse.median_abs;
    assert!(
        (0.15..=0.75).contains(&ratio),
        "quartering ratio {ratio} (medians {:e} -> {:e})",
        coarse.median_abs,
        fine.median_abs
    );
}

#[test]
fn density_discrepancy_qtsm_halves_when_dt_quartered() {
    // quadratic log-price has curvature, putting the check in the
    // square-root regime: quartering dt should halve the median
    let spec = ModelSpec::Quadratic(qtsm2());
    let x = qtsm2_x0();
    let coarse =
        density_identity_check(&spec, &x, &TimeGrid::new(0.0, 1.0, 100).unwrap(), 4000, 112)
            .unwrap();
    let fine =
        density_identity_check(&spec, &x, &TimeGrid::new(0.0, 1.0, 400).unwrap(), 4000, 112)
            .unwrap();
    let ratio = fine.median_abs / coarse.median_abs;
    assert!(
        (0.25..=0.75).contains(&ratio),
        "quartering ratio {ratio}"
    );
}

#[test]
fn fbsde_residuals_decrease_with_expected_order() {
    let spec = vasicek_model();
    let grid = TimeGrid::new(0.0, 1.0, 125).unwrap();
    let report = fbsde_residual_check(&spec, &x0(), &grid, 4000, 113, 2).unwrap();
    assert!(report.finite());
    assert!(report.levels[0].mean_abs_residual > report.levels[1].mean_abs_residual);
    assert!(report.levels[1].mean_abs_residual > report.levels[2].mean_abs_residual);
    for r in &report.ratios {
        assert!((1.3..=3.0).contains(r), "halving ratio {r}");
    }
}

#[test]
fn fbsde_residuals_jump_fixture_decrease() {
    let spec = ModelSpec::Affine(jump_vasicek());
    let grid = TimeGrid::new(0.0, 1.0, 125).unwrap();
    let report = fbsde_residual_check(&spec, &x0(), &grid, 4000, 114, 1).unwrap();
    assert!(report.finite());
    assert!(
        report.levels[0].mean_abs_residual > report.levels[1].mean_abs_residual,
        "{report:?}"
    );
}

#[test]
fn mc_estimate_ci_is_mean_plus_minus_1p96_se() {
    let est = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(est.n, 4);
    assert!((est.ci95.0 - (est.mean - 1.96 * est.std_error)).abs() < 1e-15);
    assert!((est.ci95.1 - (est.mean + 1.96 * est.std_error)).abs() < 1e-15);
}
