//! Task drivers: each produces `result.csv`, optional `plotdata/*.csv`,
//! and the assertions recorded in `summary.json`.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Value};

use omt_core::credit::{
    decomposition_check, mc_defaultable_price, sample_default, solve_p_bsde, PBsdeMethod,
    DEFAULT_SEED_SALT,
};
use omt_core::kernel::KernelSpec;
use omt_core::model::{ModelSpec, RecoveryScheme};
use omt_core::pricing::{bond_price, forward_price, futures_price, term_structure};
use omt_core::riccati::{solve_bond, RiccatiSolution};
use omt_core::simulate::{
    mc_bond_price, mc_forward_numerator, mc_futures_price, simulate, simulate_with, Recording,
    SimOptions,
};
use omt_core::verify::{
    density_identity_check, duality_check, fbsde_residual_check, jump_reduction_check,
    osc_equivalence_check,
};

use crate::config::{ConfigError, ResolvedConfig, Task};
use crate::output::{write_csv, Assertion, Cell};

/// Run failures mapped to exit codes: config -> 2, numerical -> 3.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<omt_core::Error> for RunError {
    fn from(e: omt_core::Error) -> Self {
        use omt_core::Error::*;
        match e {
            UnsupportedCombination(_) | Invalid(_) => RunError::Config(e.to_string()),
            NonFinite { .. } | SymmetryLoss { .. } | InvalidKernel { .. } | SingularTerminal => {
                RunError::Numerical(e.to_string())
            }
        }
    }
}

pub struct TaskOutput {
    pub headline: Value,
    pub assertions: Vec<Assertion>,
}

const VF_TOL: f64 = 1e-12;

fn mc_required(cfg: &ResolvedConfig) -> Result<(usize, u64), RunError> {
    let mc = cfg
        .mc
        .ok_or_else(|| RunError::Config("mc block required".into()))?;
    Ok((mc.n_paths, mc.seed))
}

pub fn run_task(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    match cfg.task {
        Task::PriceBond => price_bond(cfg, out_dir),
        Task::PriceFutures => price_futures(cfg, out_dir),
        Task::PriceForward => price_forward(cfg, out_dir),
        Task::PriceDefaultable => price_defaultable(cfg, out_dir),
        Task::RiccatiDump => riccati_dump(cfg, out_dir),
        Task::VerifyDuality => verify_duality(cfg, out_dir),
        Task::VerifyFbsde => verify_fbsde(cfg, out_dir),
        Task::VerifyDensity => verify_density(cfg, out_dir),
        Task::VerifyOsc => verify_osc(cfg, out_dir),
        Task::VerifyJumpReduction => verify_jump_reduction(cfg, out_dir),
        Task::CreditDecomposition => credit_decomposition(cfg, out_dir),
    }
}

fn yield_curve_plot(cfg: &ResolvedConfig, out_dir: &Path) -> Result<(), RunError> {
    let points = term_structure(&cfg.model, &cfg.grid, &cfg.x0)?;
    let rows: Vec<Vec<Cell>> = points
        .iter()
        .map(|p| {
            vec![
                Cell::F(p.maturity),
                Cell::F(p.price),
                Cell::F(p.value),
                Cell::F(p.yield_),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("plotdata").join("yield_curve.csv"),
        &["maturity", "price", "value", "yield"],
        &rows,
    )?;
    Ok(())
}

fn price_bond(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let res = bond_price(&cfg.model, cfg.grid.t0, cfg.grid.t_end, &cfg.x0, &cfg.grid)?;
    let tau = cfg.grid.span();
    write_csv(
        &out_dir.join("result.csv"),
        &["t", "maturity", "price", "value_function", "yield"],
        &[vec![
            Cell::F(res.t),
            Cell::F(res.maturity),
            Cell::F(res.value),
            Cell::F(res.value_function),
            Cell::F(res.value_function / tau),
        ]],
    )?;
    yield_curve_plot(cfg, out_dir)?;

    let mut assertions = vec![Assertion::new(
        "value_function_is_negative_log_price",
        (res.value_function + res.value.ln()).abs() <= VF_TOL,
        format!("V = {}, -ln P = {}", res.value_function, -res.value.ln()),
    )];
    if let Some(mc) = cfg.mc {
        let e = simulate(
            &cfg.model,
            &cfg.x0,
            &cfg.grid,
            mc.n_paths,
            mc.seed,
            &KernelSpec::Zero,
        )?;
        let est = mc_bond_price(&e);
        let z = (est.mean - res.value) / est.std_error.max(1e-300);
        assertions.push(Assertion::new(
            "monte_carlo_cross_check",
            z.abs() <= 4.0,
            format!("mc {} vs closed form {} (z = {z:.2})", est.mean, res.value),
        ));
    }
    Ok(TaskOutput {
        headline: json!({"price": res.value, "value_function": res.value_function}),
        assertions,
    })
}

fn price_futures(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let pm = cfg
        .price_model
        .as_ref()
        .ok_or_else(|| RunError::Config("price_model block required".into()))?;
    let res = futures_price(&cfg.model, pm, cfg.grid.t0, cfg.grid.t_end, &cfg.x0, &cfg.grid)?;
    write_csv(
        &out_dir.join("result.csv"),
        &["t", "maturity", "futures_price", "value_function"],
        &[vec![
            Cell::F(res.t),
            Cell::F(res.maturity),
            Cell::F(res.value),
            Cell::F(res.value_function),
        ]],
    )?;

    let mut assertions = vec![Assertion::new(
        "value_function_is_negative_log_price",
        (res.value_function + res.value.ln()).abs() <= VF_TOL,
        format!("V = {}", res.value_function),
    )];
    if let Some(mc) = cfg.mc {
        let e = simulate(
            &cfg.model,
            &cfg.x0,
            &cfg.grid,
            mc.n_paths,
            mc.seed,
            &KernelSpec::Zero,
        )?;
        let est = mc_futures_price(&e, pm);
        let z = (est.mean - res.value) / est.std_error.max(1e-300);
        assertions.push(Assertion::new(
            "monte_carlo_cross_check",
            z.abs() <= 4.0,
            format!("mc {} vs closed form {} (z = {z:.2})", est.mean, res.value),
        ));
    }
    Ok(TaskOutput {
        headline: json!({"futures_price": res.value, "value_function": res.value_function}),
        assertions,
    })
}

fn price_forward(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let pm = cfg
        .price_model
        .as_ref()
        .ok_or_else(|| RunError::Config("price_model block required".into()))?;
    let fwd = forward_price(&cfg.model, pm, cfg.grid.t0, cfg.grid.t_end, &cfg.x0, &cfg.grid)?;
    let bond = bond_price(&cfg.model, cfg.grid.t0, cfg.grid.t_end, &cfg.x0, &cfg.grid)?;
    let numerator = (-fwd.value_function).exp();
    write_csv(
        &out_dir.join("result.csv"),
        &[
            "t",
            "maturity",
            "forward_price",
            "bond_price",
            "numerator",
            "value_function",
        ],
        &[vec![
            Cell::F(fwd.t),
            Cell::F(fwd.maturity),
            Cell::F(fwd.value),
            Cell::F(bond.value),
            Cell::F(numerator),
            Cell::F(fwd.value_function),
        ]],
    )?;

    let mut assertions = vec![Assertion::new(
        "forward_split_exact",
        (fwd.value * bond.value / numerator - 1.0).abs() <= VF_TOL,
        format!("F P = {}, N = {}", fwd.value * bond.value, numerator),
    )];
    if let Some(mc) = cfg.mc {
        let e = simulate(
            &cfg.model,
            &cfg.x0,
            &cfg.grid,
            mc.n_paths,
            mc.seed,
            &KernelSpec::Zero,
        )?;
        let est = mc_forward_numerator(&e, pm);
        let z = (est.mean - numerator) / est.std_error.max(1e-300);
        assertions.push(Assertion::new(
            "monte_carlo_cross_check",
            z.abs() <= 4.0,
            format!("mc N {} vs closed form {} (z = {z:.2})", est.mean, numerator),
        ));
    }
    Ok(TaskOutput {
        headline: json!({
            "forward_price": fwd.value,
            "bond_price": bond.value,
            "numerator": numerator,
            "value_function": fwd.value_function
        }),
        assertions,
    })
}

fn price_defaultable(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let credit = cfg
        .credit
        .as_ref()
        .ok_or_else(|| RunError::Config("credit block required".into()))?;
    let (n_paths, seed) = mc_required(cfg)?;
    let ensemble = simulate_with(
        &cfg.model,
        &cfg.x0,
        &cfg.grid,
        n_paths,
        seed,
        &KernelSpec::Zero,
        SimOptions {
            recording: Recording::States,
            threads: 0,
        },
    )?;
    let outcomes = sample_default(&ensemble, &cfg.model, credit, seed ^ DEFAULT_SEED_SALT)?;
    let d = mc_defaultable_price(&ensemble, &outcomes);
    write_csv(
        &out_dir.join("result.csv"),
        &[
            "t",
            "maturity",
            "price",
            "std_error",
            "ci_lo",
            "ci_hi",
            "value_function",
        ],
        &[vec![
            Cell::F(cfg.grid.t0),
            Cell::F(cfg.grid.t_end),
            Cell::F(d.estimate.mean),
            Cell::F(d.estimate.std_error),
            Cell::F(d.estimate.ci95.0),
            Cell::F(d.estimate.ci95.1),
            Cell::F(d.value_function),
        ]],
    )?;

    let mut assertions = vec![Assertion::new(
        "value_function_is_negative_log_price",
        (d.value_function + d.estimate.mean.ln()).abs() <= VF_TOL,
        format!("V = {}", d.value_function),
    )];
    if let RecoveryScheme::FractionalFace { eta } = credit.recovery {
        let bond = bond_price(&cfg.model, cfg.grid.t0, cfg.grid.t_end, &cfg.x0, &cfg.grid)?;
        let tol = 3.0 * d.estimate.std_error;
        assertions.push(Assertion::new(
            "recovery_bounds",
            d.estimate.mean >= eta * bond.value - tol && d.estimate.mean <= bond.value + tol,
            format!(
                "eta P = {}, D = {}, P = {}",
                eta * bond.value,
                d.estimate.mean,
                bond.value
            ),
        ));
    }
    Ok(TaskOutput {
        headline: json!({
            "price": d.estimate.mean,
            "std_error": d.estimate.std_error,
            "value_function": d.value_function
        }),
        assertions,
    })
}

fn riccati_dump(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let sol = solve_bond(&cfg.model, &cfg.grid)?;
    let n = cfg.model.dim();
    let mut header: Vec<String> = vec!["s".into()];
    match &sol {
        RiccatiSolution::Affine(_) => {
            for i in 0..n {
                header.push(format!("u_{i}"));
            }
        }
        RiccatiSolution::Quadratic(_) => {
            for i in 0..n {
                for j in 0..n {
                    header.push(format!("q_{i}_{j}"));
                }
            }
            for i in 0..n {
                header.push(format!("u_{i}"));
            }
        }
    }
    header.push("p".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<Cell>> = sol
        .csv_rows()
        .into_iter()
        .map(|row| row.into_iter().map(Cell::F).collect())
        .collect();
    write_csv(&out_dir.join("result.csv"), &header_refs, &rows)?;

    let terminal_ok = match &sol {
        RiccatiSolution::Affine(a) => {
            a.u[cfg.grid.steps].amax() == 0.0 && a.p[cfg.grid.steps] == 0.0
        }
        RiccatiSolution::Quadratic(q) => {
            q.q[cfg.grid.steps].amax() == 0.0
                && q.u[cfg.grid.steps].amax() == 0.0
                && q.p[cfg.grid.steps] == 0.0
        }
    };
    Ok(TaskOutput {
        headline: json!({
            "nodes": cfg.grid.steps + 1,
            "log_price_at_t0": sol.log_price(cfg.grid.t0, &cfg.x0)
        }),
        assertions: vec![Assertion::new(
            "terminal_condition_exact",
            terminal_ok,
            "terminal node equals the supplied condition",
        )],
    })
}

fn verify_duality(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let (n_paths, seed) = mc_required(cfg)?;
    let kernels = cfg.build_kernels()?;
    let report = duality_check(&cfg.model, &cfg.x0, &kernels, &cfg.grid, n_paths, seed)?;
    let rows: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::S(r.kernel.clone()),
                Cell::F(r.objective.mean),
                Cell::F(r.objective.std_error),
                Cell::F(r.entropy.mean),
                Cell::F(r.entropy.std_error),
                Cell::F(r.gap),
                Cell::F(r.gap_std_error),
                Cell::B(r.is_optimal),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("result.csv"),
        &[
            "kernel",
            "objective",
            "objective_se",
            "entropy",
            "entropy_se",
            "gap",
            "gap_se",
            "is_optimal",
        ],
        &rows,
    )?;
    let gap_rows: Vec<Vec<Cell>> = report
        .rows
        .iter()
        .map(|r| vec![Cell::S(r.kernel.clone()), Cell::F(r.gap), Cell::F(r.gap_std_error)])
        .collect();
    write_csv(
        &out_dir.join("plotdata").join("duality_gaps.csv"),
        &["kernel", "gap", "gap_se"],
        &gap_rows,
    )?;

    let optimal_gap = report
        .rows
        .iter()
        .find(|r| r.is_optimal)
        .map(|r| r.gap)
        .unwrap_or(f64::NAN);
    Ok(TaskOutput {
        headline: json!({
            "value_closed_form": report.value_closed_form,
            "optimal_gap": optimal_gap,
            "kernels": report.rows.len()
        }),
        assertions: vec![Assertion::new(
            "duality_gaps_and_attainment",
            report.passed(),
            "gaps >= -3 se, optimal gap within 3 se, entropies >= -4 se",
        )],
    })
}

fn verify_fbsde(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let (n_paths, seed) = mc_required(cfg)?;
    let report = fbsde_residual_check(&cfg.model, &cfg.x0, &cfg.grid, n_paths, seed, 2)?;
    let rows: Vec<Vec<Cell>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                Cell::F(l.dt),
                Cell::F(l.mean_abs_residual),
                Cell::F(l.max_abs_residual),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("result.csv"),
        &["dt", "mean_abs_residual", "max_abs_residual"],
        &rows,
    )?;
    let monotone = report
        .levels
        .windows(2)
        .all(|w| w[1].mean_abs_residual < w[0].mean_abs_residual);
    Ok(TaskOutput {
        headline: json!({
            "ratios": report.ratios,
            "coarsest_mean_abs_residual": report.levels[0].mean_abs_residual
        }),
        assertions: vec![
            Assertion::new("residuals_finite", report.finite(), "all levels finite"),
            Assertion::new(
                "residuals_decrease_under_halving",
                monotone,
                format!("ratios {:?}", report.ratios),
            ),
        ],
    })
}

fn verify_density(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let (n_paths, seed) = mc_required(cfg)?;
    let coarse = density_identity_check(&cfg.model, &cfg.x0, &cfg.grid, n_paths, seed)?;
    let fine_grid = cfg.grid.refined(4);
    let fine = density_identity_check(&cfg.model, &cfg.x0, &fine_grid, n_paths, seed)?;
    let rows = vec![
        vec![
            Cell::F(coarse.dt),
            Cell::F(coarse.mean_abs),
            Cell::F(coarse.median_abs),
            Cell::F(coarse.max_abs),
        ],
        vec![
            Cell::F(fine.dt),
            Cell::F(fine.mean_abs),
            Cell::F(fine.median_abs),
            Cell::F(fine.max_abs),
        ],
    ];
    write_csv(
        &out_dir.join("result.csv"),
        &["dt", "mean_abs", "median_abs", "max_abs"],
        &rows,
    )?;
    let ratio = fine.median_abs / coarse.median_abs;
    Ok(TaskOutput {
        headline: json!({
            "median_coarse": coarse.median_abs,
            "median_fine": fine.median_abs,
            "quartering_ratio": ratio
        }),
        assertions: vec![Assertion::new(
            "discrepancy_shrinks_when_dt_quartered",
            fine.median_abs < coarse.median_abs,
            format!("ratio {ratio}"),
        )],
    })
}

fn verify_osc(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let spec = match &cfg.model {
        ModelSpec::Quadratic(q) => q,
        ModelSpec::Affine(_) => {
            return Err(RunError::Config("verify-osc requires a quadratic model".into()))
        }
    };
    let seed = cfg.mc.map(|m| m.seed).unwrap_or(0);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = cfg.model.dim();
    let scale: f64 = 0.1 + cfg.x0.amax();
    let states: Vec<DVector<f64>> = (0..10)
        .map(|_| {
            DVector::from_iterator(n, (0..n).map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale))
        })
        .collect();
    let report = osc_equivalence_check(spec, &cfg.grid, &states)?;
    write_csv(
        &out_dir.join("result.csv"),
        &["max_kernel_deviation", "max_value_deviation", "tolerance"],
        &[vec![
            Cell::F(report.max_kernel_deviation),
            Cell::F(report.max_value_deviation),
            Cell::F(report.tolerance),
        ]],
    )?;
    Ok(TaskOutput {
        headline: json!({
            "max_kernel_deviation": report.max_kernel_deviation,
            "max_value_deviation": report.max_value_deviation
        }),
        assertions: vec![Assertion::new(
            "control_equivalence",
            report.passed(),
            format!(
                "kernel dev {:e}, value dev {:e}, tol {:e}",
                report.max_kernel_deviation, report.max_value_deviation, report.tolerance
            ),
        )],
    })
}

fn verify_jump_reduction(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let report = jump_reduction_check(&cfg.model, &cfg.grid)?;
    write_csv(
        &out_dir.join("result.csv"),
        &["max_coefficient_deviation", "tolerance"],
        &[vec![
            Cell::F(report.max_coefficient_deviation),
            Cell::F(report.tolerance),
        ]],
    )?;
    Ok(TaskOutput {
        headline: json!({"max_coefficient_deviation": report.max_coefficient_deviation}),
        assertions: vec![Assertion::new(
            "jump_block_removable",
            report.passed(),
            format!(
                "deviation {:e} vs tol {:e}",
                report.max_coefficient_deviation, report.tolerance
            ),
        )],
    })
}

fn credit_decomposition(cfg: &ResolvedConfig, out_dir: &Path) -> Result<TaskOutput, RunError> {
    let credit = cfg
        .credit
        .as_ref()
        .ok_or_else(|| RunError::Config("credit block required".into()))?;
    let (n_paths, seed) = mc_required(cfg)?;
    let report = decomposition_check(&cfg.model, credit, &cfg.grid, n_paths, seed, &cfg.x0)?;
    let pbsde = solve_p_bsde(
        &cfg.model,
        credit,
        &cfg.grid,
        n_paths,
        seed,
        &cfg.x0,
        PBsdeMethod::PlainMc,
    )?;
    write_csv(
        &out_dir.join("result.csv"),
        &[
            "d_mc",
            "d_mc_se",
            "d_decomposition",
            "d_decomposition_se",
            "discrepancy",
            "discrepancy_se",
            "p_bsde",
        ],
        &[vec![
            Cell::F(report.d_mc.mean),
            Cell::F(report.d_mc.std_error),
            Cell::F(report.d_decomposition),
            Cell::F(report.d_decomposition_std_error),
            Cell::F(report.discrepancy),
            Cell::F(report.discrepancy_std_error),
            Cell::F(pbsde.p_t),
        ]],
    )?;
    // the decomposition is reported, not asserted; only well-formedness
    let finite = report.d_mc.mean.is_finite()
        && report.d_decomposition.is_finite()
        && report.discrepancy.is_finite()
        && pbsde.p_t.is_finite();
    Ok(TaskOutput {
        headline: json!({
            "d_mc": report.d_mc.mean,
            "d_decomposition": report.d_decomposition,
            "discrepancy": report.discrepancy,
            "discrepancy_se": report.discrepancy_std_error,
            "p_bsde": pbsde.p_t
        }),
        assertions: vec![Assertion::new(
            "diagnostic_report_finite",
            finite,
            "decomposition reported side by side with the direct price",
        )],
    })
}
