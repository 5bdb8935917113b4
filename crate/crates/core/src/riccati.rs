//! Backward Riccati ODE systems for exponential-affine and
//! exponential-quadratic prices, with jump extensions, plus the companion
//! LQG control system.
//!
//! Conventions (pricing side): the backward value process is
//! `Y_s = -(U_s X_s + p_s)` in the affine case and
//! `Y_s = -(X_s' q_s X_s + u_s X_s + p_s)` in the quadratic case, so the
//! price is `exp(U x + p)` resp. `exp(x'qx + ux + p)`.
//!
//! Affine system (jump terms drop when no jump block, the `R'` / `k` terms
//! drop when the terminal condition excludes the rate):
//!
//! ```text
//! dU/ds = -U A - (1/2 U k_j U')_j - theta(U) L' + R'
//! dp/ds = k - l theta(U) - 1/2 U k0 U' - U B
//! theta(U) = sum_i w_i (exp(U.z_i) - 1)
//! ```
//!
//! with `S diag(alpha_i + beta_i x) S' = k0 + sum_j k_j x_j`.
//!
//! Quadratic system:
//!
//! ```text
//! dq/ds = -qA - A'q - 1/2 (q+q') Sigma Sigma' (q+q') - theta(q,u) L2 + Q
//! du/ds = -uA - B'(q+q') - u Sigma Sigma' (q+q') - theta(q,u) L1' + R'
//! dp/ds = k - l theta(q,u) - u B - 1/2 tr((q+q') Sigma Sigma') - 1/2 u Sigma Sigma' u'
//! theta(q,u) = sum_i w_i (exp(z_i' q z_i + u.z_i) - 1)
//! ```
//!
//! Integration is classical fixed-step RK4 backwards from the terminal
//! node; `q` is re-symmetrized each step (the exact flow preserves
//! symmetry). `p` is quadrature of its integrand: composite trapezoid on
//! the solver grid, refined once by Richardson extrapolation against an
//! internal half-step pass, which restores O(dt^4) consistency with RK4.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{AffineModelSpec, DiscreteMeasure, ModelSpec, QuadraticModelSpec};

/// Uniform time grid on `[t0, t_end]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

/// Default node density per unit of time for solver grids.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 200.0;

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if t_end <= t0 || !t0.is_finite() || !t_end.is_finite() {
            return Err(invalid(format!("time grid needs t_end > t0, got [{t0}, {t_end}]")));
        }
        if steps == 0 {
            return Err(invalid("time grid needs steps >= 1"));
        }
        Ok(Self { t0, t_end, steps })
    }

    /// Grid with `ceil(200 (t_end - t0))` steps.
    pub fn with_default_steps(t0: f64, t_end: f64) -> Result<Self> {
        let steps = ((t_end - t0) * DEFAULT_STEPS_PER_UNIT).ceil().max(1.0) as usize;
        Self::new(t0, t_end, steps)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + self.dt() * i as f64
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t0
    }

    /// Same span, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            t0: self.t0,
            t_end: self.t_end,
            steps: self.steps * factor,
        }
    }

    /// Interpolation weights for an off-node time: `(i, w)` such that the
    /// value at `s` is `(1-w) f[i] + w f[i+1]`, with `s` clamped to the span.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let pos = (s - self.t0) / self.dt();
        if pos <= 0.0 {
            return (0, 0.0);
        }
        let max = self.steps as f64;
        if pos >= max {
            return (self.steps - 1, 1.0);
        }
        let i = (pos.floor() as usize).min(self.steps - 1);
        (i, pos - i as f64)
    }
}

/// Terminal data for a backward solve. `include_rate` controls whether the
/// short rate enters the driver (false for futures-style payoffs).
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCondition {
    Affine {
        u_t: DVector<f64>,
        p_t: f64,
        include_rate: bool,
    },
    Quadratic {
        q_t: DMatrix<f64>,
        u_t: DVector<f64>,
        p_t: f64,
        include_rate: bool,
    },
}

impl TerminalCondition {
    /// Zero terminal, rate in the driver: the zero-coupon bond case.
    pub fn bond_affine(n: usize) -> Self {
        TerminalCondition::Affine {
            u_t: DVector::zeros(n),
            p_t: 0.0,
            include_rate: true,
        }
    }

    pub fn bond_quadratic(n: usize) -> Self {
        TerminalCondition::Quadratic {
            q_t: DMatrix::zeros(n, n),
            u_t: DVector::zeros(n),
            p_t: 0.0,
            include_rate: true,
        }
    }
}

/// Coefficient functions of an affine solve, on the grid nodes.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    pub grid: TimeGrid,
    /// `U` per node (stored as a column; used as a row vector).
    pub u: Vec<DVector<f64>>,
    /// `p` per node.
    pub p: Vec<f64>,
}

/// Coefficient functions of a quadratic solve, on the grid nodes.
#[derive(Debug, Clone)]
pub struct QuadraticSolution {
    pub grid: TimeGrid,
    /// `q` per node, symmetric.
    pub q: Vec<DMatrix<f64>>,
    pub u: Vec<DVector<f64>>,
    pub p: Vec<f64>,
}

/// Either kind of pricing solution; piecewise-linear in time between nodes.
#[derive(Debug, Clone)]
pub enum RiccatiSolution {
    Affine(AffineSolution),
    Quadratic(QuadraticSolution),
}

fn lerp_vec(a: &DVector<f64>, b: &DVector<f64>, w: f64) -> DVector<f64> {
    a * (1.0 - w) + b * w
}

impl AffineSolution {
    pub fn coeffs_at(&self, s: f64) -> (DVector<f64>, f64) {
        let (i, w) = self.grid.locate(s);
        (
            lerp_vec(&self.u[i], &self.u[i + 1], w),
            self.p[i] * (1.0 - w) + self.p[i + 1] * w,
        )
    }

    /// `ln Price(s, x) = U_s . x + p_s`.
    pub fn log_price(&self, s: f64, x: &DVector<f64>) -> f64 {
        let (u, p) = self.coeffs_at(s);
        u.dot(x) + p
    }
}

impl QuadraticSolution {
    pub fn coeffs_at(&self, s: f64) -> (DMatrix<f64>, DVector<f64>, f64) {
        let (i, w) = self.grid.locate(s);
        (
            &self.q[i] * (1.0 - w) + &self.q[i + 1] * w,
            lerp_vec(&self.u[i], &self.u[i + 1], w),
            self.p[i] * (1.0 - w) + self.p[i + 1] * w,
        )
    }

    /// `ln Price(s, x) = x' q_s x + u_s . x + p_s`.
    pub fn log_price(&self, s: f64, x: &DVector<f64>) -> f64 {
        let (q, u, p) = self.coeffs_at(s);
        (&q * x).dot(x) + u.dot(x) + p
    }
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        match self {
            RiccatiSolution::Affine(s) => &s.grid,
            RiccatiSolution::Quadratic(s) => &s.grid,
        }
    }

    pub fn log_price(&self, s: f64, x: &DVector<f64>) -> f64 {
        match self {
            RiccatiSolution::Affine(sol) => sol.log_price(s, x),
            RiccatiSolution::Quadratic(sol) => sol.log_price(s, x),
        }
    }

    /// Value process `Y(s, x) = -ln Price(s, x)`.
    pub fn value(&self, s: f64, x: &DVector<f64>) -> f64 {
        -self.log_price(s, x)
    }

    /// CSV rows `s, coefficients (row-major), p`, one per grid node.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        match self {
            RiccatiSolution::Affine(sol) => {
                for i in 0..=sol.grid.steps {
                    let mut row = vec![sol.grid.node(i)];
                    row.extend(sol.u[i].iter());
                    row.push(sol.p[i]);
                    rows.push(row);
                }
            }
            RiccatiSolution::Quadratic(sol) => {
                for i in 0..=sol.grid.steps {
                    let mut row = vec![sol.grid.node(i)];
                    for r in 0..sol.q[i].nrows() {
                        row.extend(sol.q[i].row(r).iter());
                    }
                    row.extend(sol.u[i].iter());
                    row.push(sol.p[i]);
                    rows.push(row);
                }
            }
        }
        rows
    }
}

/// Decomposes `S diag(alpha_i + beta_i x) S'` into `k0 + sum_j k_j x_j`
/// with each `k_j` symmetric.
pub fn k_decomposition(spec: &AffineModelSpec) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = spec.dim();
    let k0 = &spec.s * DMatrix::from_diagonal(&spec.alpha) * spec.s.transpose();
    let ks = (0..n)
        .map(|j| {
            let col = spec.beta.column(j).into_owned();
            &spec.s * DMatrix::from_diagonal(&col) * spec.s.transpose()
        })
        .collect();
    (k0, ks)
}

/// Affine jump transform `integral (e^{U.z} - 1) nu(dz)` as the exact sum
/// `sum_i w_i (e^{U.z_i} - 1)`.
pub fn jump_transform_affine(u: &DVector<f64>, measure: &DiscreteMeasure) -> f64 {
    measure
        .atoms
        .iter()
        .zip(&measure.weights)
        .map(|(z, w)| w * (u.dot(z).exp_m1()))
        .sum()
}

/// Quadratic jump transform `sum_i w_i (e^{z_i' q z_i + u.z_i} - 1)`.
pub fn jump_transform_quadratic(
    q: &DMatrix<f64>,
    u: &DVector<f64>,
    measure: &DiscreteMeasure,
) -> f64 {
    measure
        .atoms
        .iter()
        .zip(&measure.weights)
        .map(|(z, w)| w * ((q * z).dot(z) + u.dot(z)).exp_m1())
        .sum()
}

/// Asymmetry tolerance before the quadratic solver reports symmetry loss.
pub const SYMMETRY_TOL: f64 = 1e-10;

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Backward cumulative trapezoid of `g` with terminal value `p_t`, then a
/// Richardson combination with the half-step pass `g_fine`.
fn richardson_p(g_coarse: &[f64], g_fine: &[f64], dt: f64, p_t: f64) -> Vec<f64> {
    let steps = g_coarse.len() - 1;
    debug_assert_eq!(g_fine.len(), 2 * steps + 1);
    let mut coarse = vec![0.0; steps + 1];
    coarse[steps] = p_t;
    for i in (0..steps).rev() {
        coarse[i] = coarse[i + 1] - 0.5 * dt * (g_coarse[i + 1] + g_coarse[i]);
    }
    let mut fine = vec![0.0; 2 * steps + 1];
    fine[2 * steps] = p_t;
    for i in (0..2 * steps).rev() {
        fine[i] = fine[i + 1] - 0.25 * dt * (g_fine[i + 1] + g_fine[i]);
    }
    (0..=steps)
        .map(|i| (4.0 * fine[2 * i] - coarse[i]) / 3.0)
        .collect()
}

struct AffineDriver<'a> {
    spec: &'a AffineModelSpec,
    k0: DMatrix<f64>,
    ks: Vec<DMatrix<f64>>,
    include_rate: bool,
}

impl AffineDriver<'_> {
    fn theta(&self, u: &DVector<f64>) -> f64 {
        match &self.spec.jump {
            Some(j) => jump_transform_affine(u, &j.measure),
            None => 0.0,
        }
    }

    /// Column form of `dU/ds`.
    fn du(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut d = -(self.spec.a.transpose() * u);
        for (j, kj) in self.ks.iter().enumerate() {
            d[j] -= 0.5 * (kj * u).dot(u);
        }
        if let Some(jump) = &self.spec.jump {
            d -= &jump.intensity_slope * self.theta(u);
        }
        if self.include_rate {
            d += &self.spec.r;
        }
        d
    }

    fn p_integrand(&self, u: &DVector<f64>) -> f64 {
        let mut v = -0.5 * (&self.k0 * u).dot(u) - u.dot(&self.spec.b);
        if self.include_rate {
            v += self.spec.k;
        }
        if let Some(jump) = &self.spec.jump {
            v -= jump.intensity_const * self.theta(u);
        }
        v
    }
}

fn integrate_affine_u(
    driver: &AffineDriver<'_>,
    grid: &TimeGrid,
    u_t: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let dt = grid.dt();
    let mut nodes = vec![DVector::zeros(u_t.len()); grid.steps + 1];
    nodes[grid.steps] = u_t.clone();
    for i in (0..grid.steps).rev() {
        let u = &nodes[i + 1];
        let k1 = driver.du(u);
        let k2 = driver.du(&(u - &k1 * (0.5 * dt)));
        let k3 = driver.du(&(u - &k2 * (0.5 * dt)));
        let k4 = driver.du(&(u - &k3 * dt));
        let next = u - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !all_finite(&next) {
            return Err(Error::NonFinite { s: grid.node(i) });
        }
        nodes[i] = next;
    }
    Ok(nodes)
}

/// Solves the affine backward system on `grid` for a general terminal
/// condition. Errors with [`Error::NonFinite`] on finite-time blow-up.
pub fn solve_affine(
    spec: &AffineModelSpec,
    grid: &TimeGrid,
    terminal: &TerminalCondition,
) -> Result<AffineSolution> {
    let (u_t, p_t, include_rate) = match terminal {
        TerminalCondition::Affine {
            u_t,
            p_t,
            include_rate,
        } => (u_t, *p_t, *include_rate),
        TerminalCondition::Quadratic { .. } => {
            return Err(invalid("affine solve needs an affine terminal condition"))
        }
    };
    if u_t.len() != spec.dim() {
        return Err(invalid("terminal U dimension mismatch"));
    }
    let (k0, ks) = k_decomposition(spec);
    let driver = AffineDriver {
        spec,
        k0,
        ks,
        include_rate,
    };
    let coarse = integrate_affine_u(&driver, grid, u_t)?;
    let fine = integrate_affine_u(&driver, &grid.refined(2), u_t)?;
    let g_c: Vec<f64> = coarse.iter().map(|u| driver.p_integrand(u)).collect();
    let g_f: Vec<f64> = fine.iter().map(|u| driver.p_integrand(u)).collect();
    let p = richardson_p(&g_c, &g_f, grid.dt(), p_t);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { s: grid.t0 });
    }
    Ok(AffineSolution {
        grid: *grid,
        u: coarse,
        p,
    })
}

struct QuadraticDriver<'a> {
    spec: &'a QuadraticModelSpec,
    /// `Sigma Sigma'`.
    ss: DMatrix<f64>,
    include_rate: bool,
}

impl QuadraticDriver<'_> {
    fn theta(&self, q: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
        match &self.spec.jump {
            Some(j) => jump_transform_quadratic(q, u, &j.measure),
            None => 0.0,
        }
    }

    fn derivs(&self, q: &DMatrix<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let qs = q + q.transpose();
        let mut dq = -(q * &self.spec.a) - self.spec.a.transpose() * q
            - (&qs * &self.ss * &qs) * 0.5;
        let mut du =
            -(self.spec.a.transpose() * u) - &qs * &self.spec.b - &qs * (&self.ss * u);
        if self.include_rate {
            dq += &self.spec.q;
            du += &self.spec.r;
        }
        if let Some(jump) = &self.spec.jump {
            let th = self.theta(q, u);
            dq -= &jump.intensity_quad * th;
            du -= &jump.intensity_slope * th;
        }
        (dq, du)
    }

    fn p_integrand(&self, q: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
        let qs = q + q.transpose();
        let mut v = -u.dot(&self.spec.b)
            - 0.5 * (&qs * &self.ss).trace()
            - 0.5 * (&self.ss * u).dot(u);
        if self.include_rate {
            v += self.spec.k;
        }
        if let Some(jump) = &self.spec.jump {
            v -= jump.intensity_const * self.theta(q, u);
        }
        v
    }
}

type QuadNodes = (Vec<DMatrix<f64>>, Vec<DVector<f64>>);

fn integrate_quadratic(
    driver: &QuadraticDriver<'_>,
    grid: &TimeGrid,
    q_t: &DMatrix<f64>,
    u_t: &DVector<f64>,
) -> Result<QuadNodes> {
    let n = u_t.len();
    let dt = grid.dt();
    let mut qs = vec![DMatrix::zeros(n, n); grid.steps + 1];
    let mut us = vec![DVector::zeros(n); grid.steps + 1];
    qs[grid.steps] = 0.5 * (q_t + q_t.transpose());
    us[grid.steps] = u_t.clone();
    for i in (0..grid.steps).rev() {
        let (q, u) = (&qs[i + 1], &us[i + 1]);
        let (dq1, du1) = driver.derivs(q, u);
        let (dq2, du2) = driver.derivs(&(q - &dq1 * (0.5 * dt)), &(u - &du1 * (0.5 * dt)));
        let (dq3, du3) = driver.derivs(&(q - &dq2 * (0.5 * dt)), &(u - &du2 * (0.5 * dt)));
        let (dq4, du4) = driver.derivs(&(q - &dq3 * dt), &(u - &du3 * dt));
        let mut q_next = q - (dq1 + dq2 * 2.0 + dq3 * 2.0 + dq4) * (dt / 6.0);
        let u_next = u - (du1 + du2 * 2.0 + du3 * 2.0 + du4) * (dt / 6.0);
        if q_next.iter().any(|v| !v.is_finite()) || !all_finite(&u_next) {
            return Err(Error::NonFinite { s: grid.node(i) });
        }
        let asym = (&q_next - q_next.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::SymmetryLoss {
                s: grid.node(i),
                deviation: asym,
            });
        }
        q_next = 0.5 * (&q_next + q_next.transpose());
        qs[i] = q_next;
        us[i] = u_next;
    }
    Ok((qs, us))
}

/// Solves the quadratic backward system on `grid`; `q` is re-symmetrized
/// each step and symmetry loss beyond [`SYMMETRY_TOL`] is an error.
pub fn solve_quadratic(
    spec: &QuadraticModelSpec,
    grid: &TimeGrid,
    terminal: &TerminalCondition,
) -> Result<QuadraticSolution> {
    let (q_t, u_t, p_t, include_rate) = match terminal {
        TerminalCondition::Quadratic {
            q_t,
            u_t,
            p_t,
            include_rate,
        } => (q_t, u_t, *p_t, *include_rate),
        TerminalCondition::Affine { .. } => {
            return Err(invalid("quadratic solve needs a quadratic terminal condition"))
        }
    };
    let n = spec.dim();
    if u_t.len() != n || q_t.nrows() != n || q_t.ncols() != n {
        return Err(invalid("terminal coefficient dimension mismatch"));
    }
    let driver = QuadraticDriver {
        spec,
        ss: &spec.sigma * spec.sigma.transpose(),
        include_rate,
    };
    let (qs, us) = integrate_quadratic(&driver, grid, q_t, u_t)?;
    let (qf, uf) = integrate_quadratic(&driver, &grid.refined(2), q_t, u_t)?;
    let g_c: Vec<f64> = qs
        .iter()
        .zip(&us)
        .map(|(q, u)| driver.p_integrand(q, u))
        .collect();
    let g_f: Vec<f64> = qf
        .iter()
        .zip(&uf)
        .map(|(q, u)| driver.p_integrand(q, u))
        .collect();
    let p = richardson_p(&g_c, &g_f, grid.dt(), p_t);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { s: grid.t0 });
    }
    Ok(QuadraticSolution {
        grid: *grid,
        q: qs,
        u: us,
        p,
    })
}

/// LQG value/feedback solution of the companion stochastic-control system:
///
/// ```text
/// dq^/ds = -(A'q^ + q^A - 2 q^ Sigma Sigma' q^ + Q)
/// dv/ds  = -(vA + 2B'q^ - 2v Sigma Sigma' q^ + R')
/// dp^/ds = -(vB + tr(Sigma' q^ Sigma) - 1/2 v Sigma Sigma' v' + k)
/// ```
///
/// with zero terminals. The value function is `W(s,x) = x'q^x + vx + p^`
/// and the minimizing feedback is `u*(s,x) = -(x'(q^+q^') + v) Sigma`,
/// which coincides with the pricing-side Girsanov kernel `Z`.
#[derive(Debug, Clone)]
pub struct OscSolution {
    pub grid: TimeGrid,
    pub q_hat: Vec<DMatrix<f64>>,
    pub v: Vec<DVector<f64>>,
    pub p_hat: Vec<f64>,
    sigma: DMatrix<f64>,
}

impl OscSolution {
    pub fn coeffs_at(&self, s: f64) -> (DMatrix<f64>, DVector<f64>, f64) {
        let (i, w) = self.grid.locate(s);
        (
            &self.q_hat[i] * (1.0 - w) + &self.q_hat[i + 1] * w,
            lerp_vec(&self.v[i], &self.v[i + 1], w),
            self.p_hat[i] * (1.0 - w) + self.p_hat[i + 1] * w,
        )
    }

    /// Control value `W(s, x)`; equals `-ln Price(s, x)` on jump-free models.
    pub fn value(&self, s: f64, x: &DVector<f64>) -> f64 {
        let (q, v, p) = self.coeffs_at(s);
        (&q * x).dot(x) + v.dot(x) + p
    }

    /// Optimal feedback `u*(s, x)` as a column vector.
    pub fn feedback(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        let (q, v, _) = self.coeffs_at(s);
        -(self.sigma.transpose() * ((&q + q.transpose()) * x + v))
    }
}

/// Solves the LQG control ODE system for a jump-free quadratic model.
pub fn solve_osc_lqg(spec: &QuadraticModelSpec, grid: &TimeGrid) -> Result<OscSolution> {
    if spec.jump.is_some() {
        return Err(Error::UnsupportedCombination(
            "the control equivalence is diffusion-only; jump models are out of scope".into(),
        ));
    }
    let n = spec.dim();
    let ss = &spec.sigma * spec.sigma.transpose();
    let derivs = |q: &DMatrix<f64>, v: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let dq = -(spec.a.transpose() * q + q * &spec.a - (q * &ss * q) * 2.0 + &spec.q);
        let dv = -(spec.a.transpose() * v + (q * &spec.b) * 2.0 - (q * (&ss * v)) * 2.0 + &spec.r);
        (dq, dv)
    };
    let integrate = |grid: &TimeGrid| -> Result<QuadNodes> {
        let dt = grid.dt();
        let mut qs = vec![DMatrix::zeros(n, n); grid.steps + 1];
        let mut vs = vec![DVector::zeros(n); grid.steps + 1];
        for i in (0..grid.steps).rev() {
            let (q, v) = (&qs[i + 1], &vs[i + 1]);
            let (dq1, dv1) = derivs(q, v);
            let (dq2, dv2) = derivs(&(q - &dq1 * (0.5 * dt)), &(v - &dv1 * (0.5 * dt)));
            let (dq3, dv3) = derivs(&(q - &dq2 * (0.5 * dt)), &(v - &dv2 * (0.5 * dt)));
            let (dq4, dv4) = derivs(&(q - &dq3 * dt), &(v - &dv3 * dt));
            let mut q_next = q - (dq1 + dq2 * 2.0 + dq3 * 2.0 + dq4) * (dt / 6.0);
            let v_next = v - (dv1 + dv2 * 2.0 + dv3 * 2.0 + dv4) * (dt / 6.0);
            if q_next.iter().any(|x| !x.is_finite()) || !all_finite(&v_next) {
                return Err(Error::NonFinite { s: grid.node(i) });
            }
            q_next = 0.5 * (&q_next + q_next.transpose());
            qs[i] = q_next;
            vs[i] = v_next;
        }
        Ok((qs, vs))
    };
    let (qs, vs) = integrate(grid)?;
    let (qf, vf) = integrate(&grid.refined(2))?;
    let integrand = |q: &DMatrix<f64>, v: &DVector<f64>| -> f64 {
        -(v.dot(&spec.b) + (spec.sigma.transpose() * q * &spec.sigma).trace()
            - 0.5 * (&ss * v).dot(v)
            + spec.k)
    };
    let g_c: Vec<f64> = qs.iter().zip(&vs).map(|(q, v)| integrand(q, v)).collect();
    let g_f: Vec<f64> = qf.iter().zip(&vf).map(|(q, v)| integrand(q, v)).collect();
    let p_hat = richardson_p(&g_c, &g_f, grid.dt(), 0.0);
    Ok(OscSolution {
        grid: *grid,
        q_hat: qs,
        v: vs,
        p_hat,
        sigma: spec.sigma.clone(),
    })
}

pub use crate::kernel::optimal_kernel;

/// Solves the pricing system for either model family.
pub fn solve(spec: &ModelSpec, grid: &TimeGrid, terminal: &TerminalCondition) -> Result<RiccatiSolution> {
    match spec {
        ModelSpec::Affine(m) => Ok(RiccatiSolution::Affine(solve_affine(m, grid, terminal)?)),
        ModelSpec::Quadratic(m) => Ok(RiccatiSolution::Quadratic(solve_quadratic(
            m, grid, terminal,
        )?)),
    }
}

/// Zero-terminal bond solve for either family.
pub fn solve_bond(spec: &ModelSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    let terminal = match spec {
        ModelSpec::Affine(m) => TerminalCondition::bond_affine(m.dim()),
        ModelSpec::Quadratic(m) => TerminalCondition::bond_quadratic(m.dim()),
    };
    solve(spec, grid, &terminal)
}
