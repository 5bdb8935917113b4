//! Verification harness for the identities the pricing machinery asserts:
//! free-energy/entropy duality, optimal-measure attainment, discretized
//! FBSDE residuals, the pathwise density identity, the control
//! equivalence, and jump-degeneracy reductions.
//!
//! Monte Carlo tolerances are expressed in estimated standard errors; gap
//! comparisons across kernels use common random numbers (same seed, hence
//! same per-path substreams).

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::kernel::{optimal_kernel, KernelSpec};
use crate::model::{ModelSpec, QuadraticModelSpec};
use crate::riccati::{
    solve_bond, solve_osc_lqg, solve_quadratic, RiccatiSolution, TerminalCondition, TimeGrid,
};
use crate::simulate::{simulate_with, McEstimate, PathEnsemble, Recording, SimOptions};

/// Relative-entropy estimate `H(Q^u | P) = E_{Q^u}[int 1/2 |u|^2 dv]`,
/// accumulated left-point along tilted paths.
pub fn entropy_estimate(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let e = simulate_with(
        spec,
        x0,
        grid,
        n_paths,
        seed,
        kernel,
        SimOptions::default(),
    )?;
    Ok(McEstimate::from_samples(&e.entropy_integrals))
}

/// Objective `J(Q^u) = E_{Q^u}[int r dv] + H(Q^u | P)`, estimated from a
/// single tilted ensemble (the two terms share paths).
pub fn omt_objective(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let e = simulate_with(
        spec,
        x0,
        grid,
        n_paths,
        seed,
        kernel,
        SimOptions::default(),
    )?;
    Ok(objective_from(&e))
}

fn objective_from(e: &PathEnsemble) -> McEstimate {
    let samples: Vec<f64> = e
        .rate_integrals
        .iter()
        .zip(&e.entropy_integrals)
        .map(|(r, h)| r + h)
        .collect();
    McEstimate::from_samples(&samples)
}

/// One kernel's row in a duality report.
#[derive(Debug, Clone)]
pub struct DualityRow {
    pub kernel: String,
    pub is_optimal: bool,
    pub objective: McEstimate,
    pub entropy: McEstimate,
    /// `J(u) - V`.
    pub gap: f64,
    pub gap_std_error: f64,
}

/// Duality check across a family of kernels against the closed-form value.
#[derive(Debug, Clone)]
pub struct DualityReport {
    /// `V = -ln P(t0, T)` from the closed form.
    pub value_closed_form: f64,
    pub rows: Vec<DualityRow>,
}

/// Absolute floor under the standard-error tolerances: zero-variance
/// estimators (deterministic integrands) would otherwise fail on float
/// rounding alone.
pub const SE_FLOOR: f64 = 1e-12;

impl DualityReport {
    /// Lower-bound direction, attainment at the optimal kernel, and
    /// entropy nonnegativity, all in standard-error units.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|row| {
            row.gap >= -(3.0 * row.gap_std_error + SE_FLOOR)
                && row.entropy.mean >= -(4.0 * row.entropy.std_error + SE_FLOOR)
                && (!row.is_optimal || row.gap.abs() <= 3.0 * row.gap_std_error + SE_FLOOR)
        })
    }
}

/// Runs the duality suite: every kernel is simulated under its own tilt
/// with common random numbers, and `J(u) - V` is reported per kernel.
/// The kernel list must include the optimal kernel for attainment.
pub fn duality_check(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    kernels: &[KernelSpec],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<DualityReport> {
    if !kernels.iter().any(|k| k.is_optimal()) {
        return Err(invalid("duality check needs the optimal kernel in the family"));
    }
    let sol = solve_bond(spec, grid)?;
    let value = -sol.log_price(grid.t0, x0);
    let mut rows = Vec::with_capacity(kernels.len());
    for kernel in kernels {
        let e = simulate_with(
            spec,
            x0,
            grid,
            n_paths,
            seed,
            kernel,
            SimOptions::default(),
        )?;
        let objective = objective_from(&e);
        rows.push(DualityRow {
            kernel: kernel.to_string(),
            is_optimal: kernel.is_optimal(),
            objective,
            entropy: McEstimate::from_samples(&e.entropy_integrals),
            gap: objective.mean - value,
            gap_std_error: objective.std_error,
        });
    }
    Ok(DualityReport {
        value_closed_form: value,
        rows,
    })
}

// ---------------------------------------------------------------------------
// pathwise walkers
// ---------------------------------------------------------------------------

struct PathWalker<'a> {
    spec: &'a ModelSpec,
    kernel: &'a KernelSpec,
    grid: TimeGrid,
    u_buf: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> PathWalker<'a> {
    fn new(spec: &'a ModelSpec, kernel: &'a KernelSpec, grid: TimeGrid) -> Self {
        let dim = spec.dim();
        PathWalker {
            spec,
            kernel,
            grid,
            u_buf: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn intensity(&self, x: &[f64]) -> f64 {
        match self.spec {
            ModelSpec::Affine(m) => match &m.jump {
                Some(j) => {
                    let mut lam = j.intensity_const;
                    for (i, xv) in x.iter().enumerate() {
                        lam += j.intensity_slope[i] * xv;
                    }
                    lam.max(0.0)
                }
                None => 0.0,
            },
            ModelSpec::Quadratic(m) => match &m.jump {
                Some(j) => {
                    let mut lam = j.intensity_const;
                    for (i, xi) in x.iter().enumerate() {
                        lam += j.intensity_slope[i] * xi;
                        for (k, xk) in x.iter().enumerate() {
                            lam += xi * j.intensity_quad[(i, k)] * xk;
                        }
                    }
                    lam.max(0.0)
                }
                None => 0.0,
            },
        }
    }

    fn rate(&self, x: &[f64]) -> f64 {
        match self.spec {
            ModelSpec::Affine(m) => {
                let mut r = m.k;
                for (i, xv) in x.iter().enumerate() {
                    r += m.r[i] * xv;
                }
                r
            }
            ModelSpec::Quadratic(m) => {
                let mut r = m.k;
                for (i, xi) in x.iter().enumerate() {
                    r += m.r[i] * xi;
                    for (k, xk) in x.iter().enumerate() {
                        r += xi * m.q[(i, k)] * xk;
                    }
                }
                r
            }
        }
    }

    /// Diffusion+jump part of the log-density accumulated along one path:
    /// `sum(-1/2 |Z|^2 dt + Z.dW) - sum lam theta_G dt + sum_jumps G`.
    fn log_density(&mut self, e: &PathEnsemble, path: usize) -> f64 {
        let dt = self.grid.dt();
        let mut acc = 0.0;
        let mut mark_iter = e.jump_marks[path].iter().peekable();
        let measure = jump_measure(self.spec);
        for k in 0..self.grid.steps {
            let s = self.grid.node(k);
            let x = e.state(path, k).expect("states recorded");
            self.kernel.eval_into(s, x, &mut self.u_buf, &mut self.tmp);
            let dw = e.noise(path, k).expect("noise recorded");
            let mut zsq = 0.0;
            let mut zdw = 0.0;
            for (uj, dwj) in self.u_buf.iter().zip(dw) {
                zsq += uj * uj;
                zdw += uj * dwj;
            }
            acc += -0.5 * zsq * dt + zdw;
            if let Some(measure) = measure {
                let lam = self.intensity(x);
                if lam > 0.0 {
                    let mut theta = 0.0;
                    for (z, w) in measure.atoms.iter().zip(&measure.weights) {
                        theta += w * self.kernel.jump_log_tilt(s, z.as_slice()).exp_m1();
                    }
                    acc -= lam * theta * dt;
                }
            }
            while let Some(mark) = mark_iter.peek() {
                if mark.step as usize != k {
                    break;
                }
                if let Some(measure) = measure {
                    let z = &measure.atoms[mark.atom as usize];
                    acc += self.kernel.jump_log_tilt(s, z.as_slice());
                }
                mark_iter.next();
            }
        }
        acc
    }

    /// Discretized BSDE residual along one path (terms telescoped):
    /// `Y_T - Y_t0 + sum[(r - lam theta_G - 1/2 |Z|^2) dt + Z.dW] + sum G`.
    fn bsde_residual(&mut self, e: &PathEnsemble, path: usize, sol: &RiccatiSolution) -> f64 {
        let dt = self.grid.dt();
        let x0 = DVector::from_row_slice(e.state(path, 0).expect("states recorded"));
        let xt = DVector::from_row_slice(e.terminal_state(path));
        let mut acc = sol.value(self.grid.t_end, &xt) - sol.value(self.grid.t0, &x0);
        let mut mark_iter = e.jump_marks[path].iter().peekable();
        let measure = jump_measure(self.spec);
        for k in 0..self.grid.steps {
            let s = self.grid.node(k);
            let x = e.state(path, k).expect("states recorded");
            self.kernel.eval_into(s, x, &mut self.u_buf, &mut self.tmp);
            let dw = e.noise(path, k).expect("noise recorded");
            let mut zsq = 0.0;
            let mut zdw = 0.0;
            for (uj, dwj) in self.u_buf.iter().zip(dw) {
                zsq += uj * uj;
                zdw += uj * dwj;
            }
            let mut driver = self.rate(x) - 0.5 * zsq;
            if let Some(measure) = measure {
                let lam = self.intensity(x);
                if lam > 0.0 {
                    let mut theta = 0.0;
                    for (z, w) in measure.atoms.iter().zip(&measure.weights) {
                        theta += w * self.kernel.jump_log_tilt(s, z.as_slice()).exp_m1();
                    }
                    driver -= lam * theta;
                }
            }
            acc += driver * dt + zdw;
            while let Some(mark) = mark_iter.peek() {
                if mark.step as usize != k {
                    break;
                }
                if let Some(measure) = measure {
                    let z = &measure.atoms[mark.atom as usize];
                    acc += self.kernel.jump_log_tilt(s, z.as_slice());
                }
                mark_iter.next();
            }
        }
        acc
    }
}

fn jump_measure(spec: &ModelSpec) -> Option<&crate::model::DiscreteMeasure> {
    match spec {
        ModelSpec::Affine(m) => m.jump.as_ref().map(|j| &j.measure),
        ModelSpec::Quadratic(m) => m.jump.as_ref().map(|j| &j.measure),
    }
}

/// Per-path statistics of `log LHS - log RHS` where
/// `log LHS = -int r - ln P(t0, T)` and `log RHS` is the accumulated
/// exponential-density exponent of the optimal kernel.
#[derive(Debug, Clone, Copy)]
pub struct DensityReport {
    pub dt: f64,
    pub mean_abs: f64,
    pub median_abs: f64,
    pub max_abs: f64,
}

/// Pathwise density-identity check under P on the given grid.
pub fn density_identity_check(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<DensityReport> {
    let sol = solve_bond(spec, grid)?;
    let log_p = sol.log_price(grid.t0, x0);
    let kernel = optimal_kernel(&sol, spec)?;
    let e = simulate_with(
        spec,
        x0,
        grid,
        n_paths,
        seed,
        &KernelSpec::Zero,
        SimOptions {
            recording: Recording::StatesAndNoise,
            threads: 0,
        },
    )?;
    let mut walker = PathWalker::new(spec, &kernel, *grid);
    let mut discrepancies: Vec<f64> = (0..n_paths)
        .map(|p| {
            let lhs = -e.rate_integrals[p] - log_p;
            let rhs = walker.log_density(&e, p);
            (lhs - rhs).abs()
        })
        .collect();
    discrepancies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = discrepancies.iter().sum::<f64>() / n_paths as f64;
    let median = if n_paths % 2 == 1 {
        discrepancies[n_paths / 2]
    } else {
        0.5 * (discrepancies[n_paths / 2 - 1] + discrepancies[n_paths / 2])
    };
    Ok(DensityReport {
        dt: grid.dt(),
        mean_abs: mean,
        median_abs: median,
        max_abs: *discrepancies.last().unwrap(),
    })
}

/// Residual statistics at one grid resolution.
#[derive(Debug, Clone, Copy)]
pub struct ResidualLevel {
    pub dt: f64,
    pub mean_abs_residual: f64,
    pub max_abs_residual: f64,
}

/// Discretized-BSDE residuals across successive grid halvings.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub levels: Vec<ResidualLevel>,
    /// `mean_abs(level i) / mean_abs(level i+1)`, one per halving.
    pub ratios: Vec<f64>,
}

impl ResidualReport {
    pub fn finite(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.mean_abs_residual.is_finite() && l.max_abs_residual.is_finite())
    }
}

/// Checks the discretized backward-equation residual along simulated paths
/// at `halvings + 1` resolutions starting from `grid`, doubling steps each
/// time. Uses the bond (zero-terminal) solution, so `Y_T = 0` exactly.
pub fn fbsde_residual_check(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    halvings: usize,
) -> Result<ResidualReport> {
    let mut levels = Vec::with_capacity(halvings + 1);
    for level in 0..=halvings {
        let g = grid.refined(1 << level);
        let sol = solve_bond(spec, &g)?;
        let kernel = optimal_kernel(&sol, spec)?;
        let e = simulate_with(
            spec,
            x0,
            &g,
            n_paths,
            seed,
            &KernelSpec::Zero,
            SimOptions {
                recording: Recording::StatesAndNoise,
                threads: 0,
            },
        )?;
        let mut walker = PathWalker::new(spec, &kernel, g);
        let mut sum = 0.0;
        let mut max = 0.0_f64;
        for p in 0..n_paths {
            let r = walker.bsde_residual(&e, p, &sol).abs();
            sum += r;
            max = max.max(r);
        }
        levels.push(ResidualLevel {
            dt: g.dt(),
            mean_abs_residual: sum / n_paths as f64,
            max_abs_residual: max,
        });
    }
    let ratios = levels
        .windows(2)
        .map(|w| w[0].mean_abs_residual / w[1].mean_abs_residual)
        .collect();
    Ok(ResidualReport { levels, ratios })
}

/// Control-equivalence check: feedback vs Girsanov kernel and control
/// value vs `-ln` price, on every grid node and supplied sample state.
#[derive(Debug, Clone, Copy)]
pub struct OscEquivalenceReport {
    pub max_kernel_deviation: f64,
    pub max_value_deviation: f64,
    pub tolerance: f64,
}

impl OscEquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_kernel_deviation <= self.tolerance && self.max_value_deviation <= self.tolerance
    }
}

/// Equivalence tolerance: the two ODE systems are exact mirrors, so the
/// deviation is at rounding level, far below this.
pub const OSC_EQUIVALENCE_TOL: f64 = 1e-8;

pub fn osc_equivalence_check(
    spec: &QuadraticModelSpec,
    grid: &TimeGrid,
    sample_states: &[DVector<f64>],
) -> Result<OscEquivalenceReport> {
    let pricing = solve_quadratic(spec, grid, &TerminalCondition::bond_quadratic(spec.dim()))?;
    let osc = solve_osc_lqg(spec, grid)?;
    let model = ModelSpec::Quadratic(spec.clone());
    let kernel = optimal_kernel(&RiccatiSolution::Quadratic(pricing.clone()), &model)?;
    let mut max_kernel = 0.0_f64;
    let mut max_value = 0.0_f64;
    for x in sample_states {
        for i in 0..=grid.steps {
            let s = grid.node(i);
            let z = kernel.eval(s, x);
            let feedback = osc.feedback(s, x);
            max_kernel = max_kernel.max((z - feedback).amax());
        }
        let w = osc.value(grid.t0, x);
        let v = -pricing.log_price(grid.t0, x);
        max_value = max_value.max((w - v).abs());
    }
    Ok(OscEquivalenceReport {
        max_kernel_deviation: max_kernel,
        max_value_deviation: max_value,
        tolerance: OSC_EQUIVALENCE_TOL,
    })
}

/// Agreement tolerance for removable-jump reductions.
pub const JUMP_REDUCTION_TOL: f64 = 1e-10;

/// Node-wise agreement between the jump solve and the jump-stripped solve.
#[derive(Debug, Clone, Copy)]
pub struct JumpReductionReport {
    pub max_coefficient_deviation: f64,
    pub tolerance: f64,
}

impl JumpReductionReport {
    pub fn passed(&self) -> bool {
        self.max_coefficient_deviation <= self.tolerance
    }
}

/// Solves the bond system with and without the jump block and reports the
/// worst node-wise coefficient deviation. Meaningful when the jump part is
/// removable (zero weights, zero intensity, or atoms at the origin).
pub fn jump_reduction_check(spec: &ModelSpec, grid: &TimeGrid) -> Result<JumpReductionReport> {
    let with = solve_bond(spec, grid)?;
    let without = solve_bond(&spec.without_jump(), grid)?;
    let mut max_dev = 0.0_f64;
    match (&with, &without) {
        (RiccatiSolution::Affine(a), RiccatiSolution::Affine(b)) => {
            for i in 0..=grid.steps {
                max_dev = max_dev.max((&a.u[i] - &b.u[i]).amax());
                max_dev = max_dev.max((a.p[i] - b.p[i]).abs());
            }
        }
        (RiccatiSolution::Quadratic(a), RiccatiSolution::Quadratic(b)) => {
            for i in 0..=grid.steps {
                max_dev = max_dev.max((&a.q[i] - &b.q[i]).amax());
                max_dev = max_dev.max((&a.u[i] - &b.u[i]).amax());
                max_dev = max_dev.max((a.p[i] - b.p[i]).abs());
            }
        }
        _ => unreachable!("solve_bond preserves the model kind"),
    }
    Ok(JumpReductionReport {
        max_coefficient_deviation: max_dev,
        tolerance: JUMP_REDUCTION_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AffineModelSpec;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn vasicek() -> ModelSpec {
        ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.1],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![1.0],
            k: 0.0,
            jump: None,
        })
    }

    #[test]
    fn entropy_of_zero_kernel_is_exactly_zero() {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let est = entropy_estimate(&vasicek(), &dvector![0.05], &KernelSpec::Zero, &grid, 64, 1)
            .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn entropy_of_constant_kernel_is_deterministic() {
        // 1/2 * 0.3^2 * 1 = 0.045, zero variance
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let est = entropy_estimate(
            &vasicek(),
            &dvector![0.05],
            &KernelSpec::Constant(dvector![0.3]),
            &grid,
            64,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(est.mean, 0.045, epsilon = 1e-13);
        assert_abs_diff_eq!(est.std_error, 0.0, epsilon = 1e-16);
    }

    #[test]
    fn objective_of_deterministic_rate_is_exact() {
        // r = k: J(u) = k (T - t) + 1/2 |u|^2 (T - t) for constant u
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.1],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![0.0],
            k: 0.04,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let est = omt_objective(
            &spec,
            &dvector![0.05],
            &KernelSpec::Constant(dvector![0.5]),
            &grid,
            32,
            2,
        )
        .unwrap();
        assert_abs_diff_eq!(est.mean, 0.04 + 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std_error, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn duality_requires_optimal_kernel() {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let err = duality_check(
            &vasicek(),
            &dvector![0.05],
            &[KernelSpec::Zero],
            &grid,
            16,
            1,
        );
        assert!(err.is_err());
    }

    #[test]
    fn duality_gaps_exact_on_deterministic_rate_model() {
        // r = k: V = k T, J(zero) = k T with zero variance, and a constant
        // kernel pays exactly its entropy 1/2 c^2 T
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.1],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![0.0],
            k: 0.03,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let sol = solve_bond(&spec, &grid).unwrap();
        let kernels = vec![
            KernelSpec::Zero,
            KernelSpec::Constant(dvector![0.5]),
            optimal_kernel(&sol, &spec).unwrap(),
        ];
        let report = duality_check(&spec, &dvector![0.05], &kernels, &grid, 64, 9).unwrap();
        assert!(report.passed());
        assert_abs_diff_eq!(report.value_closed_form, 0.03, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rows[0].gap, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rows[1].gap, 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rows[2].gap, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residuals_vanish_for_zero_volatility() {
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.0],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![1.0],
            k: 0.0,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let report = fbsde_residual_check(&spec, &dvector![0.05], &grid, 16, 3, 1).unwrap();
        // deterministic path: only quadrature-order defects remain
        assert!(report.levels[0].max_abs_residual < 1e-5);
        assert!(report.levels[1].max_abs_residual < report.levels[0].max_abs_residual);
    }

    #[test]
    fn density_check_zero_for_deterministic_rate() {
        // R = 0 kills U, hence Z == 0; both sides vanish identically.
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.1],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![0.0],
            k: 0.03,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let report =
            density_identity_check(&spec, &dvector![0.05], &grid, 128, 5).unwrap();
        assert!(report.max_abs < 1e-12, "max {}", report.max_abs);
    }

    #[test]
    fn density_check_zero_for_zero_volatility() {
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.0],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![1.0],
            k: 0.0,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let report =
            density_identity_check(&spec, &dvector![0.05], &grid, 64, 5).unwrap();
        // LHS carries only the rate-quadrature defect of a deterministic
        // path against the closed form; RHS is exactly zero.
        assert!(report.max_abs < 1e-6, "max {}", report.max_abs);
    }

    #[test]
    fn residuals_vanish_for_deterministic_rate() {
        let spec = ModelSpec::Affine(AffineModelSpec {
            a: dmatrix![-1.0],
            b: dvector![0.05],
            s: dmatrix![0.1],
            alpha: dvector![1.0],
            beta: dmatrix![0.0],
            r: dvector![0.0],
            k: 0.03,
            jump: None,
        });
        let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let report =
            fbsde_residual_check(&spec, &dvector![0.05], &grid, 64, 3, 1).unwrap();
        // Y is deterministic and linear in s; only quadrature-order defects
        // of p remain.
        assert!(report.levels[0].max_abs_residual < 1e-10);
    }

    #[test]
    fn jump_reduction_removable_variants_exact() {
        use crate::model::{DiscreteMeasure, JumpSpecAffine};
        let base = match vasicek() {
            ModelSpec::Affine(m) => m,
            _ => unreachable!(),
        };
        let grid = TimeGrid::new(0.0, 1.0, 80).unwrap();
        let variants = [
            // atom at the origin: the transform vanishes identically
            JumpSpecAffine {
                intensity_slope: dvector![0.3],
                intensity_const: 0.2,
                measure: DiscreteMeasure::new(vec![dvector![0.0]], vec![1.5]),
            },
            // all weights zero
            JumpSpecAffine {
                intensity_slope: dvector![0.3],
                intensity_const: 0.2,
                measure: DiscreteMeasure::new(vec![dvector![0.4]], vec![0.0]),
            },
            // zero intensity
            JumpSpecAffine {
                intensity_slope: dvector![0.0],
                intensity_const: 0.0,
                measure: DiscreteMeasure::new(vec![dvector![0.4]], vec![1.0]),
            },
        ];
        for jump in variants {
            let mut m = base.clone();
            m.jump = Some(jump);
            let report = jump_reduction_check(&ModelSpec::Affine(m), &grid).unwrap();
            assert!(report.passed(), "dev {}", report.max_coefficient_deviation);
        }
    }

    #[test]
    fn osc_equivalence_zero_cost_data() {
        let spec = QuadraticModelSpec {
            a: dmatrix![-0.5, 0.1; 0.0, -0.7],
            b: dvector![0.01, 0.02],
            sigma: dmatrix![0.1, 0.0; 0.03, 0.08],
            q: nalgebra::DMatrix::zeros(2, 2),
            r: dvector![0.0, 0.0],
            k: 0.0,
            jump: None,
        };
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let report =
            osc_equivalence_check(&spec, &grid, &[dvector![0.4, -0.2], dvector![0.0, 0.0]])
                .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_kernel_deviation, 0.0);
        assert_eq!(report.max_value_deviation, 0.0);
    }
}
