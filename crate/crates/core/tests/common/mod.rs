//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here intentionally avoid the library's solvers: textbook
//! closed forms, an adaptive RKF45 integrator, and Gaussian moment ODEs,
//! so that agreement is a genuine cross-check.
#![allow(dead_code)] // each test binary uses its own subset

use nalgebra::{dmatrix, dvector, DVector};
use omt_core::model::{
    AffineModelSpec, DiscreteMeasure, JumpSpecAffine, ModelSpec, QuadraticModelSpec,
};

pub const VASICEK_A: f64 = 1.0;
pub const VASICEK_B: f64 = 0.05;
pub const VASICEK_SIGMA: f64 = 0.1;
pub const VASICEK_X0: f64 = 0.05;

pub fn vasicek() -> AffineModelSpec {
    AffineModelSpec {
        a: dmatrix![-VASICEK_A],
        b: dvector![VASICEK_A * VASICEK_B],
        s: dmatrix![VASICEK_SIGMA],
        alpha: dvector![1.0],
        beta: dmatrix![0.0],
        r: dvector![1.0],
        k: 0.0,
        jump: None,
    }
}

pub fn cir() -> AffineModelSpec {
    AffineModelSpec {
        a: dmatrix![-1.0],
        b: dvector![0.05],
        s: dmatrix![0.1],
        alpha: dvector![0.0],
        beta: dmatrix![1.0],
        r: dvector![1.0],
        k: 0.0,
        jump: None,
    }
}

/// Two-factor quadratic fixture with strictly positive rates; the initial
/// state sits at the drift equilibrium.
pub fn qtsm2() -> QuadraticModelSpec {
    QuadraticModelSpec {
        a: dmatrix![-0.8, 0.1; 0.05, -0.6],
        b: dvector![0.037, 0.0155],
        sigma: dmatrix![0.08, 0.0; 0.02, 0.06],
        q: dmatrix![2.0, 0.4; 0.4, 1.0],
        r: dvector![0.2, 0.1],
        k: 0.01,
        jump: None,
    }
}

pub fn qtsm2_x0() -> DVector<f64> {
    dvector![0.05, 0.03]
}

/// Vasicek with a single upward jump atom, the jump fixture of the
/// acceptance suite.
pub fn jump_vasicek() -> AffineModelSpec {
    let mut spec = vasicek();
    spec.jump = Some(JumpSpecAffine {
        intensity_slope: dvector![0.2],
        intensity_const: 0.1,
        measure: DiscreteMeasure::new(vec![dvector![0.1]], vec![0.5]),
    });
    spec
}

pub fn vasicek_model() -> ModelSpec {
    ModelSpec::Affine(vasicek())
}

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// Textbook Vasicek zero-coupon bond price.
pub fn vasicek_bond_oracle(a: f64, b: f64, sigma: f64, r0: f64, tau: f64) -> f64 {
    let big_b = (1.0 - (-a * tau).exp()) / a;
    let ln_a = (big_b - tau) * (a * a * b - sigma * sigma / 2.0) / (a * a)
        - sigma * sigma * big_b * big_b / (4.0 * a);
    (ln_a - big_b * r0).exp()
}

/// Textbook CIR zero-coupon bond price.
pub fn cir_bond_oracle(a: f64, b: f64, sigma: f64, r0: f64, tau: f64) -> f64 {
    let h = (a * a + 2.0 * sigma * sigma).sqrt();
    let den = 2.0 * h + (a + h) * ((h * tau).exp() - 1.0);
    let big_a = (2.0 * h * ((a + h) * tau / 2.0).exp() / den).powf(2.0 * a * b / (sigma * sigma));
    let big_b = 2.0 * ((h * tau).exp() - 1.0) / den;
    big_a * (-big_b * r0).exp()
}

/// Joint Gaussian moments of `(X_T, int_0^T X dv)` for the OU process
/// `dX = a (b - X) dt + sigma dW`, by RK4 on the moment ODEs.
/// Returns `(mean_x, mean_int, var_x, cov, var_int)`.
pub fn ou_moments(a: f64, b: f64, sigma: f64, x0: f64, t: f64) -> (f64, f64, f64, f64, f64) {
    let steps = 20_000;
    let h = t / steps as f64;
    let mut y = [x0, 0.0, 0.0, 0.0, 0.0]; // EX, EI, VarX, Cov(I,X), VarI
    let f = |y: &[f64; 5]| -> [f64; 5] {
        [
            a * (b - y[0]),
            y[0],
            -2.0 * a * y[2] + sigma * sigma,
            y[2] - a * y[3],
            2.0 * y[3],
        ]
    };
    for _ in 0..steps {
        let k1 = f(&y);
        let mut y2 = y;
        for i in 0..5 {
            y2[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = f(&y2);
        for i in 0..5 {
            y2[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = f(&y2);
        for i in 0..5 {
            y2[i] = y[i] + h * k3[i];
        }
        let k4 = f(&y2);
        for i in 0..5 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (y[0], y[1], y[2], y[3], y[4])
}

/// Adaptive RKF45 backward integration of a scalar ODE `dy/ds = f(s, y)`
/// from `(t_end, y_end)` down to `t0`, with absolute tolerance `tol`.
pub fn rkf45_backward(f: impl Fn(f64, f64) -> f64, t0: f64, t_end: f64, y_end: f64, tol: f64) -> f64 {
    // Fehlberg coefficients
    const A: [[f64; 5]; 5] = [
        [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
        [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
        [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
        [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
    ];
    const B5: [f64; 6] = [
        16.0 / 135.0,
        0.0,
        6656.0 / 12825.0,
        28561.0 / 56430.0,
        -9.0 / 50.0,
        2.0 / 55.0,
    ];
    const B4: [f64; 6] = [
        25.0 / 216.0,
        0.0,
        1408.0 / 2565.0,
        2197.0 / 4104.0,
        -1.0 / 5.0,
        0.0,
    ];
    const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];

    let mut s = t_end;
    let mut y = y_end;
    let mut h = -(t_end - t0) / 100.0;
    while s > t0 + 1e-14 {
        if s + h < t0 {
            h = t0 - s;
        }
        let mut k = [0.0; 6];
        k[0] = f(s, y);
        for i in 1..6 {
            let mut yi = y;
            for j in 0..i {
                yi += h * A[i - 1][j] * k[j];
            }
            k[i] = f(s + C[i] * h, yi);
        }
        let y5: f64 = y + h * B5.iter().zip(&k).map(|(b, kv)| b * kv).sum::<f64>();
        let y4: f64 = y + h * B4.iter().zip(&k).map(|(b, kv)| b * kv).sum::<f64>();
        let err = (y5 - y4).abs().max(1e-300);
        if err <= tol {
            s += h;
            y = y5;
        }
        let scale = (tol / err).powf(0.2).clamp(0.1, 4.0);
        h *= 0.9 * scale;
        if h.abs() < 1e-12 {
            h = -1e-12;
        }
    }
    y
}
