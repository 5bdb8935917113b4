//! Girsanov kernels `u(s, x)` defining exponential tilts `Q^u` of the
//! reference measure, including the optimal (forward-measure) kernel built
//! from a Riccati solution:
//!
//! * affine models: `Z(s, x) = U_s S diag(sqrt(alpha_i + beta_i x))`,
//!   jump tilt `G(s, z) = U_s z`;
//! * quadratic models: `Z(s, x) = (x'(q_s + q_s') + u_s) Sigma`,
//!   jump tilt `G(s, z) = z' q_s z + u_s z`.
//!
//! Coefficients are interpolated linearly in `s` between solution nodes.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::riccati::{RiccatiSolution, TimeGrid};

/// Row-major flattening; the hot simulation loops work on slices.
fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Optimal-kernel payload: flattened coefficient trajectories plus the
/// diffusion data needed to turn coefficients into a kernel value.
#[derive(Debug, Clone)]
pub struct OptimalKernel {
    grid: TimeGrid,
    dim: usize,
    kind: OptimalKind,
    /// Whether the generating model carries a jump block, i.e. whether
    /// `G(s, z)` participates in tilts.
    has_jump: bool,
}

#[derive(Debug, Clone)]
enum OptimalKind {
    Affine {
        /// `U S` per node, flattened `(steps+1) x dim`.
        us_s: Vec<f64>,
        /// `U` per node (for the jump tilt), flattened.
        us: Vec<f64>,
        alpha: Vec<f64>,
        /// row-major `dim x dim`.
        beta: Vec<f64>,
    },
    Quadratic {
        /// `q + q'` per node, flattened row-major `(steps+1) x dim x dim`.
        qs2: Vec<f64>,
        /// `u` per node.
        us: Vec<f64>,
        /// row-major `dim x dim`.
        sigma: Vec<f64>,
    },
}

/// A candidate Girsanov kernel.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// `u = 0`: no tilt, simulation stays under the reference measure.
    Zero,
    /// Constant row vector.
    Constant(DVector<f64>),
    /// State-linear kernel `u(s, x) = offset + slope x`.
    AffineInState {
        offset: DVector<f64>,
        slope: DMatrix<f64>,
    },
    /// The optimal kernel `Z` (plus `G` on jump models) from a solved
    /// backward system.
    Optimal(Box<OptimalKernel>),
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Zero => write!(f, "zero"),
            KernelSpec::Constant(u) => {
                let parts: Vec<String> = u.iter().map(|v| format!("{v}")).collect();
                write!(f, "constant[{}]", parts.join(","))
            }
            KernelSpec::AffineInState { .. } => write!(f, "affine-in-state"),
            KernelSpec::Optimal(_) => write!(f, "optimal"),
        }
    }
}

impl KernelSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, KernelSpec::Zero)
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self, KernelSpec::Optimal(_))
    }

    /// Whether the kernel tilts the jump part as well.
    pub fn has_jump_part(&self) -> bool {
        match self {
            KernelSpec::Optimal(k) => k.has_jump,
            _ => false,
        }
    }

    pub(crate) fn dim_hint(&self) -> Option<usize> {
        match self {
            KernelSpec::Zero => None,
            KernelSpec::Constant(u) => Some(u.len()),
            KernelSpec::AffineInState { offset, .. } => Some(offset.len()),
            KernelSpec::Optimal(k) => Some(k.dim),
        }
    }

    /// Writes `u(s, x)` into `out`. `scratch` must hold `dim` values.
    pub(crate) fn eval_into(&self, s: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match self {
            KernelSpec::Zero => out.fill(0.0),
            KernelSpec::Constant(u) => {
                for (o, v) in out.iter_mut().zip(u.iter()) {
                    *o = *v;
                }
            }
            KernelSpec::AffineInState { offset, slope } => {
                let n = out.len();
                for i in 0..n {
                    let mut acc = offset[i];
                    for (j, xv) in x.iter().enumerate() {
                        acc += slope[(i, j)] * xv;
                    }
                    out[i] = acc;
                }
            }
            KernelSpec::Optimal(k) => k.eval_into(s, x, out, scratch),
        }
    }

    /// Jump log-tilt `G(s, z)`; zero for kernels without a jump part.
    pub(crate) fn jump_log_tilt(&self, s: f64, z: &[f64]) -> f64 {
        match self {
            KernelSpec::Optimal(k) if k.has_jump => k.jump_log_tilt(s, z),
            _ => 0.0,
        }
    }

    /// Convenience evaluation as a `DVector` (cold paths and tests).
    pub fn eval(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut out = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        self.eval_into(s, x.as_slice(), &mut out, &mut scratch);
        DVector::from_vec(out)
    }
}

impl OptimalKernel {
    fn node_slice<'a>(&self, data: &'a [f64], i: usize, width: usize) -> &'a [f64] {
        &data[i * width..(i + 1) * width]
    }

    fn eval_into(&self, s: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.dim;
        let (i, w) = self.grid.locate(s);
        match &self.kind {
            OptimalKind::Affine {
                us_s, alpha, beta, ..
            } => {
                // out_j = sqrt(max(alpha_j + beta_j.x, 0)) * (U S)_j
                let lo = self.node_slice(us_s, i, n);
                let hi = self.node_slice(us_s, i + 1, n);
                for j in 0..n {
                    let usj = lo[j] * (1.0 - w) + hi[j] * w;
                    let mut diag = alpha[j];
                    for (m, xv) in x.iter().enumerate() {
                        diag += beta[j * n + m] * xv;
                    }
                    out[j] = usj * diag.max(0.0).sqrt();
                }
            }
            OptimalKind::Quadratic { qs2, us, sigma } => {
                // scratch = x'(q+q') + u, out = scratch . Sigma
                let qlo = self.node_slice(qs2, i, n * n);
                let qhi = self.node_slice(qs2, i + 1, n * n);
                let ulo = self.node_slice(us, i, n);
                let uhi = self.node_slice(us, i + 1, n);
                for j in 0..n {
                    let mut acc = ulo[j] * (1.0 - w) + uhi[j] * w;
                    for (m, xv) in x.iter().enumerate() {
                        let q2 = qlo[m * n + j] * (1.0 - w) + qhi[m * n + j] * w;
                        acc += xv * q2;
                    }
                    scratch[j] = acc;
                }
                for j in 0..n {
                    let mut acc = 0.0;
                    for (m, sv) in scratch.iter().enumerate() {
                        acc += sv * sigma[m * n + j];
                    }
                    out[j] = acc;
                }
            }
        }
    }

    fn jump_log_tilt(&self, s: f64, z: &[f64]) -> f64 {
        let n = self.dim;
        let (i, w) = self.grid.locate(s);
        match &self.kind {
            OptimalKind::Affine { us, .. } => {
                let lo = self.node_slice(us, i, n);
                let hi = self.node_slice(us, i + 1, n);
                let mut acc = 0.0;
                for j in 0..n {
                    acc += (lo[j] * (1.0 - w) + hi[j] * w) * z[j];
                }
                acc
            }
            OptimalKind::Quadratic { qs2, us, .. } => {
                let qlo = self.node_slice(qs2, i, n * n);
                let qhi = self.node_slice(qs2, i + 1, n * n);
                let ulo = self.node_slice(us, i, n);
                let uhi = self.node_slice(us, i + 1, n);
                let mut acc = 0.0;
                for j in 0..n {
                    acc += (ulo[j] * (1.0 - w) + uhi[j] * w) * z[j];
                    for m in 0..n {
                        // z'qz = 1/2 z'(q+q')z
                        let q2 = qlo[j * n + m] * (1.0 - w) + qhi[j * n + m] * w;
                        acc += 0.5 * z[j] * q2 * z[m];
                    }
                }
                acc
            }
        }
    }
}

/// Builds the optimal kernel from a solved system and its generating model.
/// The solution and model kinds must match.
pub fn optimal_kernel(sol: &RiccatiSolution, spec: &ModelSpec) -> Result<KernelSpec> {
    match (sol, spec) {
        (RiccatiSolution::Affine(sol), ModelSpec::Affine(m)) => {
            let n = m.dim();
            let mut us_s = Vec::with_capacity((sol.grid.steps + 1) * n);
            let mut us = Vec::with_capacity((sol.grid.steps + 1) * n);
            for u in &sol.u {
                let row = u.transpose() * &m.s; // U S as a row
                us_s.extend(row.iter());
                us.extend(u.iter());
            }
            Ok(KernelSpec::Optimal(Box::new(OptimalKernel {
                grid: sol.grid,
                dim: n,
                kind: OptimalKind::Affine {
                    us_s,
                    us,
                    alpha: sol_alpha(m),
                    beta: flatten(&m.beta),
                },
                has_jump: m.jump.is_some(),
            })))
        }
        (RiccatiSolution::Quadratic(sol), ModelSpec::Quadratic(m)) => {
            let n = m.dim();
            let mut qs2 = Vec::with_capacity((sol.grid.steps + 1) * n * n);
            let mut us = Vec::with_capacity((sol.grid.steps + 1) * n);
            for (q, u) in sol.q.iter().zip(&sol.u) {
                qs2.extend(flatten(&(q + q.transpose())));
                us.extend(u.iter());
            }
            Ok(KernelSpec::Optimal(Box::new(OptimalKernel {
                grid: sol.grid,
                dim: n,
                kind: OptimalKind::Quadratic {
                    qs2,
                    us,
                    sigma: flatten(&m.sigma),
                },
                has_jump: m.jump.is_some(),
            })))
        }
        _ => Err(Error::UnsupportedCombination(
            "solution kind does not match model kind".into(),
        )),
    }
}

fn sol_alpha(m: &crate::model::AffineModelSpec) -> Vec<f64> {
    m.alpha.iter().copied().collect()
}
