//! Run configuration: JSON schema types, dotted-path overrides, and
//! conversion into the core model types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use omt_core::kernel::KernelSpec;
use omt_core::model::{
    validate_affine, validate_credit, validate_quadratic, AffineModelSpec, CreditSpec,
    DiscreteMeasure, JumpSpecAffine, JumpSpecQuadratic, ModelSpec, PriceModelSpec, QuadraticModelSpec,
    RecoveryScheme, ValidationReport,
};
use omt_core::riccati::TimeGrid;

/// Errors surfaced as exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineJumpConfig {
    pub intensity_slope: Vec<f64>,
    pub intensity_const: f64,
    pub measure: MeasureConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineModelConfig {
    pub drift_matrix: Vec<Vec<f64>>,
    pub drift_const: Vec<f64>,
    pub vol_matrix: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub rate_slope: Vec<f64>,
    pub rate_const: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<AffineJumpConfig>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticJumpConfig {
    pub intensity_quad: Vec<Vec<f64>>,
    pub intensity_slope: Vec<f64>,
    pub intensity_const: f64,
    pub measure: MeasureConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticModelConfig {
    pub drift_matrix: Vec<Vec<f64>>,
    pub drift_const: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub rate_quad: Vec<Vec<f64>>,
    pub rate_slope: Vec<f64>,
    pub rate_const: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<QuadraticJumpConfig>,
    pub x0: Vec<f64>,
}

/// Exactly one of the two families must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticModelConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriceModelConfig {
    Apm {
        a_t: Vec<f64>,
        h_t: f64,
    },
    Qpm {
        b_t: Vec<Vec<f64>>,
        a_t: Vec<f64>,
        h_t: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    Zero,
    Constant { u: Vec<f64> },
    Affine { offset: Vec<f64>, slope: Vec<Vec<f64>> },
    Optimal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RecoveryConfig {
    FractionalFace { eta: f64 },
    FractionalPreDefault { eta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditConfig {
    pub intensity_slope: Vec<f64>,
    pub intensity_const: f64,
    pub recovery: RecoveryConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    PriceBond,
    PriceFutures,
    PriceForward,
    PriceDefaultable,
    RiccatiDump,
    VerifyDuality,
    VerifyFbsde,
    VerifyDensity,
    VerifyOsc,
    VerifyJumpReduction,
    CreditDecomposition,
}

impl Task {
    pub const ALL: [&'static str; 11] = [
        "price-bond",
        "price-futures",
        "price-forward",
        "price-defaultable",
        "riccati-dump",
        "verify-duality",
        "verify-fbsde",
        "verify-density",
        "verify-osc",
        "verify-jump-reduction",
        "credit-decomposition",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::PriceBond => "price-bond",
            Task::PriceFutures => "price-futures",
            Task::PriceForward => "price-forward",
            Task::PriceDefaultable => "price-defaultable",
            Task::RiccatiDump => "riccati-dump",
            Task::VerifyDuality => "verify-duality",
            Task::VerifyFbsde => "verify-fbsde",
            Task::VerifyDensity => "verify-density",
            Task::VerifyOsc => "verify-osc",
            Task::VerifyJumpReduction => "verify-jump-reduction",
            Task::CreditDecomposition => "credit-decomposition",
        }
    }

    fn needs_mc(&self) -> bool {
        matches!(
            self,
            Task::PriceDefaultable
                | Task::VerifyDuality
                | Task::VerifyFbsde
                | Task::VerifyDensity
                | Task::CreditDecomposition
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_model: Option<PriceModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credit: Option<CreditConfig>,
}

/// The fully validated, core-typed run inputs.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub task: Task,
    pub model: ModelSpec,
    pub x0: DVector<f64>,
    pub grid: TimeGrid,
    pub mc: Option<McConfig>,
    pub price_model: Option<PriceModelSpec>,
    pub kernels: Option<Vec<KernelConfig>>,
    pub credit: Option<CreditSpec>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    let nr = rows.len();
    if nr == 0 {
        return cfg_err(format!("{what}: empty matrix"));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return cfg_err(format!("{what}: ragged matrix rows"));
    }
    let mut m = DMatrix::zeros(nr, nc);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn to_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn measure_from(cfg: &MeasureConfig) -> DiscreteMeasure {
    DiscreteMeasure::new(
        cfg.atoms.iter().map(|z| to_vector(z)).collect(),
        cfg.weights.clone(),
    )
}

fn report_failures(report: &ValidationReport, what: &str) -> Result<(), ConfigError> {
    if report.passed() {
        return Ok(());
    }
    let msgs: Vec<String> = report
        .failures()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    cfg_err(format!("{what} failed validation: {}", msgs.join("; ")))
}

impl RunConfig {
    /// Parses a JSON value (after overrides) into a `RunConfig`, with
    /// field-path diagnostics on failure.
    pub fn from_value(value: &Value) -> Result<Self, ConfigError> {
        serde_json::from_value(value.clone()).map_err(|e| ConfigError(e.to_string()))
    }

    /// Validates sub-block presence and model invariants, producing core
    /// types.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let (model, x0) = match (&self.model.affine, &self.model.quadratic) {
            (Some(_), Some(_)) => {
                return cfg_err("model: exactly one of `affine`/`quadratic` allowed, both present")
            }
            (None, None) => return cfg_err("model: one of `affine`/`quadratic` required"),
            (Some(a), None) => {
                let spec = AffineModelSpec {
                    a: to_matrix(&a.drift_matrix, "model.affine.drift_matrix")?,
                    b: to_vector(&a.drift_const),
                    s: to_matrix(&a.vol_matrix, "model.affine.vol_matrix")?,
                    alpha: to_vector(&a.alpha),
                    beta: to_matrix(&a.beta, "model.affine.beta")?,
                    r: to_vector(&a.rate_slope),
                    k: a.rate_const,
                    jump: a.jump.as_ref().map(|j| JumpSpecAffine {
                        intensity_slope: to_vector(&j.intensity_slope),
                        intensity_const: j.intensity_const,
                        measure: measure_from(&j.measure),
                    }),
                };
                let x0 = to_vector(&a.x0);
                report_failures(&validate_affine(&spec, &x0), "model.affine")?;
                (ModelSpec::Affine(spec), x0)
            }
            (None, Some(q)) => {
                let spec = QuadraticModelSpec {
                    a: to_matrix(&q.drift_matrix, "model.quadratic.drift_matrix")?,
                    b: to_vector(&q.drift_const),
                    sigma: to_matrix(&q.sigma, "model.quadratic.sigma")?,
                    q: to_matrix(&q.rate_quad, "model.quadratic.rate_quad")?,
                    r: to_vector(&q.rate_slope),
                    k: q.rate_const,
                    jump: q.jump.as_ref().map(|j| JumpSpecQuadratic {
                        intensity_quad: to_matrix(&j.intensity_quad, "intensity_quad")
                            .unwrap_or_else(|_| DMatrix::zeros(0, 0)),
                        intensity_slope: to_vector(&j.intensity_slope),
                        intensity_const: j.intensity_const,
                        measure: measure_from(&j.measure),
                    }),
                };
                let x0 = to_vector(&q.x0);
                report_failures(&validate_quadratic(&spec), "model.quadratic")?;
                (ModelSpec::Quadratic(spec), x0)
            }
        };

        let grid = TimeGrid::new(self.grid.t0, self.grid.t_end, self.grid.steps)
            .map_err(|e| ConfigError(format!("grid: {e}")))?;

        if self.task.needs_mc() && self.mc.is_none() {
            return cfg_err(format!("mc: block required for task {}", self.task.name()));
        }
        if matches!(
            self.task,
            Task::PriceFutures | Task::PriceForward
        ) && self.price_model.is_none()
        {
            return cfg_err(format!(
                "price_model: block required for task {}",
                self.task.name()
            ));
        }
        if matches!(self.task, Task::VerifyDuality) && self.kernels.is_none() {
            return cfg_err("kernels: block required for task verify-duality");
        }
        if matches!(
            self.task,
            Task::PriceDefaultable | Task::CreditDecomposition
        ) && self.credit.is_none()
        {
            return cfg_err(format!(
                "credit: block required for task {}",
                self.task.name()
            ));
        }
        if matches!(self.task, Task::VerifyOsc | Task::VerifyJumpReduction) {
            match (&model, self.task) {
                (ModelSpec::Affine(_), Task::VerifyOsc) => {
                    return cfg_err("verify-osc requires a quadratic model")
                }
                (m, Task::VerifyJumpReduction) if !m.has_jump() => {
                    return cfg_err("verify-jump-reduction requires a jump block")
                }
                _ => {}
            }
        }

        let price_model = match &self.price_model {
            None => None,
            Some(PriceModelConfig::Apm { a_t, h_t }) => Some(PriceModelSpec::Apm {
                a_t: to_vector(a_t),
                h_t: *h_t,
            }),
            Some(PriceModelConfig::Qpm { b_t, a_t, h_t }) => Some(PriceModelSpec::Qpm {
                b_t: to_matrix(b_t, "price_model.b_t")?,
                a_t: to_vector(a_t),
                h_t: *h_t,
            }),
        };

        let credit = match &self.credit {
            None => None,
            Some(c) => {
                let spec = CreditSpec {
                    intensity_slope: to_vector(&c.intensity_slope),
                    intensity_const: c.intensity_const,
                    recovery: match c.recovery {
                        RecoveryConfig::FractionalFace { eta } => {
                            RecoveryScheme::FractionalFace { eta }
                        }
                        RecoveryConfig::FractionalPreDefault { eta } => {
                            RecoveryScheme::FractionalPreDefault { eta }
                        }
                    },
                };
                report_failures(&validate_credit(&spec), "credit")?;
                Some(spec)
            }
        };

        Ok(ResolvedConfig {
            task: self.task,
            model,
            x0,
            grid,
            mc: self.mc,
            price_model,
            kernels: self.kernels.clone(),
            credit,
        })
    }
}

impl ResolvedConfig {
    /// Instantiates the configured kernel family; `optimal` is built from
    /// the bond solve on the run grid.
    pub fn build_kernels(&self) -> Result<Vec<KernelSpec>, ConfigError> {
        let cfgs = self
            .kernels
            .as_ref()
            .ok_or_else(|| ConfigError("kernels: block missing".into()))?;
        let mut out = Vec::with_capacity(cfgs.len());
        for cfg in cfgs {
            let kernel = match cfg {
                KernelConfig::Zero => KernelSpec::Zero,
                KernelConfig::Constant { u } => KernelSpec::Constant(to_vector(u)),
                KernelConfig::Affine { offset, slope } => KernelSpec::AffineInState {
                    offset: to_vector(offset),
                    slope: to_matrix(slope, "kernels[].slope")?,
                },
                KernelConfig::Optimal => {
                    let sol = omt_core::riccati::solve_bond(&self.model, &self.grid)
                        .map_err(|e| ConfigError(format!("optimal kernel solve: {e}")))?;
                    omt_core::kernel::optimal_kernel(&sol, &self.model)
                        .map_err(|e| ConfigError(format!("optimal kernel: {e}")))?
                }
            };
            out.push(kernel);
        }
        Ok(out)
    }
}

/// Applies a `key.path=value` override to a JSON document, creating
/// intermediate objects as needed. Values parse as JSON first, falling
/// back to a string literal.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return cfg_err(format!("override `{assignment}` is not of the form key=value"));
    };
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match cursor {
                Value::Object(map) => {
                    map.insert(part.to_string(), parsed);
                    return Ok(());
                }
                _ => return cfg_err(format!("override path `{path}`: `{part}` not an object")),
            }
        }
        cursor = match cursor {
            Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            _ => return cfg_err(format!("override path `{path}`: `{part}` not an object")),
        };
    }
    unreachable!("split produces at least one part")
}
