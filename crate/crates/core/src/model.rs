//! Model parameterizations shared by every other module.
//!
//! Two factor-dynamics families are supported:
//!
//! * affine: `dX = (A X + B) ds + S diag(sqrt(alpha_i + beta_i X)) dW + z dN`,
//!   short rate `r(x) = R'x + k`, jump intensity `lambda(x) = L'x + l`;
//! * quadratic: `dX = (A X + B) ds + Sigma dW + z dN`,
//!   short rate `r(x) = x'Qx + R'x + k`,
//!   jump intensity `lambda(x) = x'L2 x + L1'x + l`.
//!
//! Jump marks are drawn from a finite discrete measure, which keeps every
//! jump transform an exact finite sum.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use nalgebra::{DMatrix, DVector};

/// Finite discrete jump-mark measure: atoms `z_i` with weights `w_i > 0`.
///
/// The measure is not required to be normalized; its total mass multiplies
/// the state intensity, matching the compensator `nu(dz) lambda(x) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub atoms: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Self {
        Self { atoms, weights }
    }

    /// Total mass `nu(R^n) = sum_i w_i`.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Jump block of an affine model: `lambda(x) = L'x + l` with mark measure `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpecAffine {
    /// `L`, the state-linear part of the intensity.
    pub intensity_slope: DVector<f64>,
    /// `l`, the constant part of the intensity.
    pub intensity_const: f64,
    pub measure: DiscreteMeasure,
}

/// Jump block of a quadratic model: `lambda(x) = x'L2 x + L1'x + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpecQuadratic {
    /// `L2`, symmetric positive semidefinite.
    pub intensity_quad: DMatrix<f64>,
    /// `L1`.
    pub intensity_slope: DVector<f64>,
    /// `l`.
    pub intensity_const: f64,
    pub measure: DiscreteMeasure,
}

/// Affine term-structure model `(A, B, S, alpha, beta, R, k)` with an
/// optional jump block.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModelSpec {
    /// `A`, n x n drift feedback matrix.
    pub a: DMatrix<f64>,
    /// `B`, drift constant.
    pub b: DVector<f64>,
    /// `S`, non-singular volatility mixing matrix.
    pub s: DMatrix<f64>,
    /// `alpha_i`, constant parts of the squared diagonal volatilities.
    pub alpha: DVector<f64>,
    /// `beta`, row i is `beta_i` so the i-th squared volatility is
    /// `alpha_i + beta_i . x`.
    pub beta: DMatrix<f64>,
    /// `R`, rate slope.
    pub r: DVector<f64>,
    /// `k`, rate constant.
    pub k: f64,
    pub jump: Option<JumpSpecAffine>,
}

impl AffineModelSpec {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Short rate `r(x) = R'x + k`.
    pub fn rate(&self, x: &DVector<f64>) -> f64 {
        self.r.dot(x) + self.k
    }
}

/// Quadratic term-structure model `(A, B, Sigma, Q, R, k)` with an optional
/// jump block.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModelSpec {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `Sigma`, constant volatility matrix.
    pub sigma: DMatrix<f64>,
    /// `Q`, symmetric positive semidefinite rate curvature.
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
    pub k: f64,
    pub jump: Option<JumpSpecQuadratic>,
}

impl QuadraticModelSpec {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Short rate `r(x) = x'Qx + R'x + k`.
    pub fn rate(&self, x: &DVector<f64>) -> f64 {
        (&self.q * x).dot(x) + self.r.dot(x) + self.k
    }
}

/// Either factor-dynamics family; the common currency of pricing,
/// simulation and verification.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Affine(AffineModelSpec),
    Quadratic(QuadraticModelSpec),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Affine(m) => m.dim(),
            ModelSpec::Quadratic(m) => m.dim(),
        }
    }

    pub fn rate(&self, x: &DVector<f64>) -> f64 {
        match self {
            ModelSpec::Affine(m) => m.rate(x),
            ModelSpec::Quadratic(m) => m.rate(x),
        }
    }

    pub fn has_jump(&self) -> bool {
        match self {
            ModelSpec::Affine(m) => m.jump.is_some(),
            ModelSpec::Quadratic(m) => m.jump.is_some(),
        }
    }

    /// Strips the jump block, leaving the diffusion/rate part untouched.
    pub fn without_jump(&self) -> ModelSpec {
        match self {
            ModelSpec::Affine(m) => {
                let mut m = m.clone();
                m.jump = None;
                ModelSpec::Affine(m)
            }
            ModelSpec::Quadratic(m) => {
                let mut m = m.clone();
                m.jump = None;
                ModelSpec::Quadratic(m)
            }
        }
    }
}

/// Terminal payoff model for futures/forwards:
/// `ln S(T, x) = x'B_T x + A_T'x + h_T`, with `B_T = 0` for the affine kind.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceModelSpec {
    /// Affine price model (APM): `ln S = A_T'x + h_T`.
    Apm { a_t: DVector<f64>, h_t: f64 },
    /// Quadratic price model (QPM): `ln S = x'B_T x + A_T'x + h_T`.
    Qpm {
        b_t: DMatrix<f64>,
        a_t: DVector<f64>,
        h_t: f64,
    },
}

impl PriceModelSpec {
    pub fn log_payoff(&self, x: &DVector<f64>) -> f64 {
        match self {
            PriceModelSpec::Apm { a_t, h_t } => a_t.dot(x) + h_t,
            PriceModelSpec::Qpm { b_t, a_t, h_t } => (b_t * x).dot(x) + a_t.dot(x) + h_t,
        }
    }

    pub fn payoff(&self, x: &DVector<f64>) -> f64 {
        self.log_payoff(x).exp()
    }
}

/// Recovery scheme of a defaultable bond; `eta` is the recovered fraction,
/// strictly positive to exclude complete default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryScheme {
    /// Fraction `eta` of face value paid at maturity.
    FractionalFace { eta: f64 },
    /// Fraction `eta` of the pre-default market value paid at default,
    /// carried to maturity at the realized short rate.
    FractionalPreDefault { eta: f64 },
}

impl RecoveryScheme {
    pub fn eta(&self) -> f64 {
        match self {
            RecoveryScheme::FractionalFace { eta } => *eta,
            RecoveryScheme::FractionalPreDefault { eta } => *eta,
        }
    }
}

/// Reduced-form default block: intensity `lambda_d(x) = Lambda'x + lambda0`
/// plus a recovery scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditSpec {
    /// `Lambda`.
    pub intensity_slope: DVector<f64>,
    /// `lambda0 >= 0`.
    pub intensity_const: f64,
    pub recovery: RecoveryScheme,
}

impl CreditSpec {
    /// Default intensity, floored at zero by consumers.
    pub fn intensity(&self, x: &DVector<f64>) -> f64 {
        self.intensity_slope.dot(x) + self.intensity_const
    }
}

/// One named invariant check.
#[derive(Debug, Clone)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable detail, including offending indices where relevant.
    pub detail: String,
}

/// Outcome of validating a model spec: pass/fail per invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(ValidationCheck {
            name,
            passed,
            detail,
        });
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Relative singular-value floor below which `S` counts as singular.
pub const SINGULARITY_TOL: f64 = 1e-12;

fn check_dims_affine(spec: &AffineModelSpec, x0: &DVector<f64>, report: &mut ValidationReport) {
    let n = spec.dim();
    let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
    let ok = square(&spec.a)
        && square(&spec.s)
        && square(&spec.beta)
        && spec.alpha.len() == n
        && spec.r.len() == n
        && x0.len() == n
        && spec.jump.as_ref().is_none_or(|j| {
            j.intensity_slope.len() == n && j.measure.atoms.iter().all(|z| z.len() == n)
        });
    report.push(
        "dimensions",
        ok,
        if ok {
            format!("all blocks conform to n = {n}")
        } else {
            format!("blocks do not conform to n = {n}")
        },
    );
}

/// Validates an affine spec against its invariants at the initial state
/// `x0`: `S` non-singular, `alpha_i + beta_i . x0 >= 0`, `alpha >= 0` when
/// `beta = 0`, and jump-block sign constraints.
///
/// Pure function of its arguments; returns a report rather than erroring.
pub fn validate_affine(spec: &AffineModelSpec, x0: &DVector<f64>) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_dims_affine(spec, x0, &mut report);
    if !report.passed() {
        return report;
    }

    let svd = spec.s.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let nonsingular = smax > 0.0 && smin > SINGULARITY_TOL * smax;
    report.push(
        "s_nonsingular",
        nonsingular,
        format!("singular values in [{smin:e}, {smax:e}]"),
    );

    let mut offending = Vec::new();
    for i in 0..spec.dim() {
        let v = spec.alpha[i] + spec.beta.row(i).transpose().dot(x0);
        if v < 0.0 {
            offending.push(i);
        }
    }
    report.push(
        "diffusion_nonnegative_at_x0",
        offending.is_empty(),
        if offending.is_empty() {
            "alpha_i + beta_i.x0 >= 0 for all i".into()
        } else {
            format!("alpha_i + beta_i.x0 < 0 at indices {offending:?}")
        },
    );

    if spec.beta.iter().all(|&b| b == 0.0) {
        let bad: Vec<usize> = (0..spec.dim()).filter(|&i| spec.alpha[i] < 0.0).collect();
        report.push(
            "alpha_nonnegative",
            bad.is_empty(),
            if bad.is_empty() {
                "beta = 0 and alpha >= 0".into()
            } else {
                format!("beta = 0 but alpha < 0 at indices {bad:?}")
            },
        );
    }

    if let Some(jump) = &spec.jump {
        validate_jump_common(
            jump.intensity_const,
            &jump.measure,
            jump.intensity_slope.iter().any(|&v| v != 0.0),
            &mut report,
        );
    }
    report
}

/// Validates a quadratic spec: `Q` (and `L2` when present) symmetric with
/// eigenvalues above `-1e-12`, plus jump-block sign constraints.
pub fn validate_quadratic(spec: &QuadraticModelSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.dim();
    let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
    let dims_ok = square(&spec.a)
        && square(&spec.sigma)
        && square(&spec.q)
        && spec.r.len() == n
        && spec.jump.as_ref().is_none_or(|j| {
            square(&j.intensity_quad)
                && j.intensity_slope.len() == n
                && j.measure.atoms.iter().all(|z| z.len() == n)
        });
    report.push(
        "dimensions",
        dims_ok,
        if dims_ok {
            format!("all blocks conform to n = {n}")
        } else {
            format!("blocks do not conform to n = {n}")
        },
    );
    if !dims_ok {
        return report;
    }

    check_psd("q_symmetric", "q_psd", &spec.q, &mut report);
    if let Some(jump) = &spec.jump {
        check_psd("l2_symmetric", "l2_psd", &jump.intensity_quad, &mut report);
        validate_jump_common(
            jump.intensity_const,
            &jump.measure,
            jump.intensity_slope.iter().any(|&v| v != 0.0)
                || jump.intensity_quad.iter().any(|&v| v != 0.0),
            &mut report,
        );
    }
    report
}

/// PSD eigenvalue tolerance used by [`validate_quadratic`].
pub const PSD_TOL: f64 = 1e-12;

fn check_psd(
    sym_name: &'static str,
    psd_name: &'static str,
    m: &DMatrix<f64>,
    report: &mut ValidationReport,
) {
    let asym = (m - m.transpose()).amax();
    let symmetric = asym <= 1e-12 * (1.0 + m.amax());
    report.push(sym_name, symmetric, format!("max |m - m'| = {asym:e}"));
    if !symmetric {
        return;
    }
    let eig = m.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    report.push(
        psd_name,
        min_eig >= -PSD_TOL,
        format!("smallest eigenvalue = {min_eig:e}"),
    );
}

fn validate_jump_common(
    intensity_const: f64,
    measure: &DiscreteMeasure,
    state_dependent: bool,
    report: &mut ValidationReport,
) {
    report.push(
        "jump_intensity_const_nonnegative",
        intensity_const >= 0.0,
        format!("l = {intensity_const}"),
    );
    let shapes_ok = measure.atoms.len() == measure.weights.len() && !measure.is_empty();
    report.push(
        "jump_measure_nonempty",
        shapes_ok,
        format!(
            "{} atoms, {} weights",
            measure.atoms.len(),
            measure.weights.len()
        ),
    );
    let bad: Vec<usize> = measure
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w <= 0.0)
        .map(|(i, _)| i)
        .collect();
    report.push(
        "jump_weights_positive",
        bad.is_empty(),
        if bad.is_empty() {
            "all weights > 0".into()
        } else {
            format!("non-positive weights at indices {bad:?}")
        },
    );
    if state_dependent {
        report.push(
            "jump_intensity_state_dependent",
            true,
            "state-dependent intensity; simulation floors it at 0".into(),
        );
    }
}

/// Validates a credit block: `eta` in (0, 1] and `lambda0 >= 0`.
pub fn validate_credit(credit: &CreditSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let eta = credit.recovery.eta();
    report.push(
        "eta_positive",
        eta > 0.0,
        format!("eta = {eta} (complete default excluded)"),
    );
    report.push("eta_at_most_one", eta <= 1.0, format!("eta = {eta}"));
    report.push(
        "lambda0_nonnegative",
        credit.intensity_const >= 0.0,
        format!("lambda0 = {}", credit.intensity_const),
    );
    report
}
