//! Closed-form solver outputs against independently coded oracles, plus
//! order-of-convergence and equivalence properties of the backward solves.

mod common;

use common::*;
use nalgebra::{dmatrix, dvector, DVector};
use omt_core::model::{ModelSpec, PriceModelSpec};
use omt_core::pricing::{bond_price, forward_price, futures_price};
use omt_core::riccati::{
    solve_affine, solve_bond, solve_osc_lqg, solve_quadratic, RiccatiSolution, TerminalCondition,
    TimeGrid,
};
use omt_core::verify::osc_equivalence_check;

#[test]
fn vasicek_bond_matches_textbook_formula() {
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let res = bond_price(
        &vasicek_model(),
        0.0,
        1.0,
        &dvector![VASICEK_X0],
        &grid,
    )
    .unwrap();
    let oracle = vasicek_bond_oracle(VASICEK_A, VASICEK_B, VASICEK_SIGMA, VASICEK_X0, 1.0);
    let rel = (res.value / oracle - 1.0).abs();
    assert!(rel <= 1e-10, "relative error {rel:e}");
    assert!((res.value_function + oracle.ln()).abs() <= 1e-10);
}

#[test]
fn vasicek_bond_matches_moment_ode_oracle() {
    // second independent route: P = exp(-E[int r] + 1/2 Var[int r])
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let res = bond_price(&vasicek_model(), 0.0, 1.0, &dvector![VASICEK_X0], &grid).unwrap();
    let (_, mean_int, _, _, var_int) =
        ou_moments(VASICEK_A, VASICEK_B, VASICEK_SIGMA, VASICEK_X0, 1.0);
    let oracle = (-mean_int + 0.5 * var_int).exp();
    assert!((res.value / oracle - 1.0).abs() <= 1e-9);
}

#[test]
fn cir_bond_matches_textbook_formula() {
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let res = bond_price(
        &ModelSpec::Affine(cir()),
        0.0,
        1.0,
        &dvector![0.05],
        &grid,
    )
    .unwrap();
    let oracle = cir_bond_oracle(1.0, 0.05, 0.1, 0.05, 1.0);
    let rel = (res.value / oracle - 1.0).abs();
    assert!(rel <= 1e-10, "relative error {rel:e}");
}

#[test]
fn scalar_quadratic_coefficient_matches_rkf45() {
    // n = 1 QTSM: A = -1, B = 0, Sigma = 0.1, Q = 1, R = 0, k = 0
    let spec = omt_core::model::QuadraticModelSpec {
        a: dmatrix![-1.0],
        b: dvector![0.0],
        sigma: dmatrix![0.1],
        q: dmatrix![1.0],
        r: dvector![0.0],
        k: 0.0,
        jump: None,
    };
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let sol = solve_quadratic(&spec, &grid, &TerminalCondition::bond_quadratic(1)).unwrap();
    // dq/ds = -2 A q - 2 Sigma^2 q^2 + Q, integrated by the adaptive oracle
    let q0 = rkf45_backward(
        |_s, q| 2.0 * q - 2.0 * 0.01 * q * q + 1.0,
        0.0,
        1.0,
        0.0,
        1e-12,
    );
    assert!(
        (sol.q[0][(0, 0)] - q0).abs() <= 1e-9,
        "solver {} oracle {}",
        sol.q[0][(0, 0)],
        q0
    );
}

#[test]
fn rk4_richardson_ratios_are_fourth_order() {
    // criterion: halving-difference ratios within [8, 32] for every solver
    let coeff0 = |sol: &RiccatiSolution| -> DVector<f64> {
        match sol {
            RiccatiSolution::Affine(a) => {
                let mut v: Vec<f64> = a.u[0].iter().copied().collect();
                v.push(a.p[0]);
                DVector::from_vec(v)
            }
            RiccatiSolution::Quadratic(q) => {
                let mut v: Vec<f64> = q.q[0].iter().copied().collect();
                v.extend(q.u[0].iter());
                v.push(q.p[0]);
                DVector::from_vec(v)
            }
        }
    };
    let specs: Vec<ModelSpec> = vec![
        ModelSpec::Affine(vasicek()),
        ModelSpec::Affine(cir()),
        ModelSpec::Affine(jump_vasicek()),
        ModelSpec::Quadratic(qtsm2()),
    ];
    for spec in &specs {
        let mut vals = Vec::new();
        for steps in [25, 50, 100] {
            let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
            vals.push(coeff0(&solve_bond(spec, &grid).unwrap()));
        }
        let num = (&vals[0] - &vals[1]).norm();
        let den = (&vals[1] - &vals[2]).norm();
        let ratio = num / den;
        assert!(
            (8.0..=32.0).contains(&ratio),
            "ratio {ratio} out of [8, 32]"
        );
    }
}

#[test]
fn osc_richardson_ratio_is_fourth_order() {
    let spec = qtsm2();
    let x = dvector![0.4, -0.3];
    let mut vals = Vec::new();
    for steps in [25, 50, 100] {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let sol = solve_osc_lqg(&spec, &grid).unwrap();
        vals.push(sol.value(0.0, &x));
    }
    let ratio = (vals[0] - vals[1]).abs() / (vals[1] - vals[2]).abs();
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn osc_mirrors_pricing_solution() {
    // q^ = -q, v = -u, p^ = -p node-by-node on a jump-free QTSM
    let spec = qtsm2();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let pricing = solve_quadratic(&spec, &grid, &TerminalCondition::bond_quadratic(2)).unwrap();
    let osc = solve_osc_lqg(&spec, &grid).unwrap();
    for i in 0..=grid.steps {
        assert!((&osc.q_hat[i] + &pricing.q[i]).amax() <= 1e-8);
        assert!((&osc.v[i] + &pricing.u[i]).amax() <= 1e-8);
        assert!((osc.p_hat[i] + pricing.p[i]).abs() <= 1e-8);
    }
}

#[test]
fn osc_value_is_negative_log_bond_price() {
    let spec = qtsm2();
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let x = qtsm2_x0();
    let osc = solve_osc_lqg(&spec, &grid).unwrap();
    let bond = bond_price(&ModelSpec::Quadratic(spec), 0.0, 1.0, &x, &grid).unwrap();
    assert!((osc.value(0.0, &x) + bond.value.ln()).abs() <= 1e-9);
}

#[test]
fn osc_equivalence_on_random_states() {
    // two PSD curvature choices, ten sample states each
    let mut alt = qtsm2();
    alt.q = dmatrix![1.3, -0.5; -0.5, 0.9];
    alt.r = dvector![-0.1, 0.3];
    for spec in [qtsm2(), alt] {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        // deterministic pseudo-random sample states
        let mut seed = 0.37_f64;
        let mut states = Vec::new();
        for _ in 0..10 {
            seed = (seed * 997.0).fract();
            let a = seed - 0.5;
            seed = (seed * 997.0).fract();
            let b = seed - 0.5;
            states.push(dvector![a, b]);
        }
        let report = osc_equivalence_check(&spec, &grid, &states).unwrap();
        assert!(
            report.passed(),
            "kernel dev {:e}, value dev {:e}",
            report.max_kernel_deviation,
            report.max_value_deviation
        );
    }
}

#[test]
fn futures_terminal_matches_payoff_exactly() {
    // include_rate = false with terminal (A_T, h_T): at s = T the price is
    // S(T, x) exactly, for any state
    let spec = vasicek();
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let a_t = dvector![1.0];
    let h_t = 0.2;
    let sol = solve_affine(
        &spec,
        &grid,
        &TerminalCondition::Affine {
            u_t: a_t.clone(),
            p_t: h_t,
            include_rate: false,
        },
    )
    .unwrap();
    for xv in [-0.3, 0.0, 0.4] {
        let x = dvector![xv];
        let price = sol.log_price(1.0, &x).exp();
        assert_eq!(price, (a_t.dot(&x) + h_t).exp());
    }
}

#[test]
fn futures_price_matches_ou_mgf() {
    // G = E[e^{X_T}] for the OU factor: lognormal mean as oracle
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let pm = PriceModelSpec::Apm {
        a_t: dvector![1.0],
        h_t: 0.0,
    };
    let res = futures_price(&vasicek_model(), &pm, 0.0, 1.0, &dvector![VASICEK_X0], &grid).unwrap();
    let (mean_x, _, var_x, _, _) = ou_moments(VASICEK_A, VASICEK_B, VASICEK_SIGMA, VASICEK_X0, 1.0);
    let oracle = (mean_x + 0.5 * var_x).exp();
    assert!((res.value / oracle - 1.0).abs() <= 1e-9);
}

#[test]
fn forward_numerator_matches_joint_moment_oracle() {
    // N = E[e^{-int X + X_T}] from the joint Gaussian of (X_T, int X)
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let pm = PriceModelSpec::Apm {
        a_t: dvector![1.0],
        h_t: 0.0,
    };
    let res = forward_price(&vasicek_model(), &pm, 0.0, 1.0, &dvector![VASICEK_X0], &grid).unwrap();
    let n = (-res.value_function).exp();
    let (mx, mi, vx, c, vi) = ou_moments(VASICEK_A, VASICEK_B, VASICEK_SIGMA, VASICEK_X0, 1.0);
    let oracle = (-mi + mx + 0.5 * (vi + vx - 2.0 * c)).exp();
    assert!((n / oracle - 1.0).abs() <= 1e-9, "N {n} oracle {oracle}");
}

#[test]
fn quadratic_futures_terminal_matches_qpm_payoff() {
    let spec = qtsm2();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let b_t = dmatrix![0.5, 0.0; 0.0, 0.2];
    let a_t = dvector![1.0, -0.5];
    let h_t = 0.05;
    let sol = solve_quadratic(
        &spec,
        &grid,
        &TerminalCondition::Quadratic {
            q_t: b_t.clone(),
            u_t: a_t.clone(),
            p_t: h_t,
            include_rate: false,
        },
    )
    .unwrap();
    let x = dvector![0.1, -0.2];
    let expect = ((&b_t * &x).dot(&x) + a_t.dot(&x) + h_t).exp();
    assert_eq!(sol.log_price(1.0, &x).exp(), expect);
}

#[test]
fn jump_riccati_richardson_ratio_quadratic_family() {
    use omt_core::model::{DiscreteMeasure, JumpSpecQuadratic};
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
    let x = qtsm2_x0();
    let mut vals = Vec::new();
    for steps in [25, 50, 100] {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let sol = solve_bond(&ModelSpec::Quadratic(spec.clone()), &grid).unwrap();
        vals.push(sol.log_price(0.0, &x));
    }
    let ratio = (vals[0] - vals[1]).abs() / (vals[1] - vals[2]).abs();
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn csv_rows_carry_grid_and_terminal() {
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let sol = solve_bond(&vasicek_model(), &grid).unwrap();
    let rows = sol.csv_rows();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[10][0], 1.0);
    // terminal row: U = 0, p = 0
    assert_eq!(rows[10][1], 0.0);
    assert_eq!(rows[10][2], 0.0);
}
