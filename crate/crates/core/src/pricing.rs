//! Closed-form prices and value functions from solved backward systems:
//! zero-coupon bonds, futures, and forwards.
//!
//! `Price = exp(U x + p)` (affine) or `exp(x'qx + ux + p)` (quadratic);
//! the value function is the negative log of the quantity the measure
//! transformation targets: `V = -ln P` for bonds, `V = -ln G` for futures,
//! and `V = -ln(F P)` for forwards, whose target is the discounted payoff
//! expectation `N = F P` rather than `F` itself.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, PriceModelSpec};
use crate::riccati::{solve, solve_bond, RiccatiSolution, TerminalCondition, TimeGrid};

/// How a price was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    ClosedForm,
    MonteCarlo,
    Decomposition,
}

/// A priced contract with its value function.
#[derive(Debug, Clone, Copy)]
pub struct PriceResult {
    /// Quoted price (face = 1 for bonds).
    pub value: f64,
    /// `-ln` of the contract's expectation target; equals `-ln value` for
    /// bonds and futures, and `-ln (value * P(t, T))` for forwards.
    pub value_function: f64,
    pub t: f64,
    pub maturity: f64,
    pub method: PriceMethod,
}

/// `-ln value` of a priced result.
pub fn value_function(result: &PriceResult) -> f64 {
    -result.value.ln()
}

fn check_grid(grid: &TimeGrid, t: f64, maturity: f64) -> Result<()> {
    if (grid.t0 - t).abs() > 1e-12 || (grid.t_end - maturity).abs() > 1e-12 {
        return Err(invalid(format!(
            "grid [{}, {}] does not span [t, T] = [{t}, {maturity}]",
            grid.t0, grid.t_end
        )));
    }
    Ok(())
}

/// Zero-coupon bond price `P(t, T) = exp(ln-price at t)` from the
/// zero-terminal backward solve with the rate in the driver.
pub fn bond_price(
    spec: &ModelSpec,
    t: f64,
    maturity: f64,
    x: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<PriceResult> {
    if t == maturity {
        return Ok(PriceResult {
            value: 1.0,
            value_function: 0.0,
            t,
            maturity,
            method: PriceMethod::ClosedForm,
        });
    }
    check_grid(grid, t, maturity)?;
    let sol = solve_bond(spec, grid)?;
    let log_p = sol.log_price(t, x);
    Ok(PriceResult {
        value: log_p.exp(),
        value_function: -log_p,
        t,
        maturity,
        method: PriceMethod::ClosedForm,
    })
}

fn terminal_from_price_model(
    spec: &ModelSpec,
    pm: &PriceModelSpec,
    include_rate: bool,
) -> Result<TerminalCondition> {
    let n = spec.dim();
    match (spec, pm) {
        (ModelSpec::Affine(_), PriceModelSpec::Apm { a_t, h_t }) => Ok(TerminalCondition::Affine {
            u_t: a_t.clone(),
            p_t: *h_t,
            include_rate,
        }),
        (ModelSpec::Affine(_), PriceModelSpec::Qpm { .. }) => Err(Error::UnsupportedCombination(
            "quadratic payoffs have no affine closed form; use the quadratic model family".into(),
        )),
        (ModelSpec::Quadratic(_), PriceModelSpec::Apm { a_t, h_t }) => {
            Ok(TerminalCondition::Quadratic {
                q_t: nalgebra::DMatrix::zeros(n, n),
                u_t: a_t.clone(),
                p_t: *h_t,
                include_rate,
            })
        }
        (ModelSpec::Quadratic(_), PriceModelSpec::Qpm { b_t, a_t, h_t }) => {
            Ok(TerminalCondition::Quadratic {
                q_t: b_t.clone(),
                u_t: a_t.clone(),
                p_t: *h_t,
                include_rate,
            })
        }
    }
}

fn require_no_jump(spec: &ModelSpec, what: &str) -> Result<()> {
    if spec.has_jump() {
        return Err(Error::UnsupportedCombination(format!(
            "{what} pricing is defined for diffusion models only"
        )));
    }
    Ok(())
}

/// Futures price `G(t, T) = E_P[S(T, X_T)]`: rate-free driver with the
/// log-payoff coefficients as terminal data.
pub fn futures_price(
    spec: &ModelSpec,
    price_model: &PriceModelSpec,
    t: f64,
    maturity: f64,
    x: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<PriceResult> {
    require_no_jump(spec, "futures")?;
    if t == maturity {
        let value = price_model.payoff(x);
        return Ok(PriceResult {
            value,
            value_function: -value.ln(),
            t,
            maturity,
            method: PriceMethod::ClosedForm,
        });
    }
    check_grid(grid, t, maturity)?;
    let terminal = terminal_from_price_model(spec, price_model, false)?;
    let sol = solve(spec, grid, &terminal)?;
    let log_g = sol.log_price(t, x);
    Ok(PriceResult {
        value: log_g.exp(),
        value_function: -log_g,
        t,
        maturity,
        method: PriceMethod::ClosedForm,
    })
}

/// Forward price `F(t, T) = E_P[e^{-int r} S(T, X_T)] / P(t, T)`.
/// The stored value function is `-ln` of the numerator, i.e. `-ln(F P)`.
pub fn forward_price(
    spec: &ModelSpec,
    price_model: &PriceModelSpec,
    t: f64,
    maturity: f64,
    x: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<PriceResult> {
    require_no_jump(spec, "forward")?;
    if t == maturity {
        let value = price_model.payoff(x);
        return Ok(PriceResult {
            value,
            value_function: -value.ln(),
            t,
            maturity,
            method: PriceMethod::ClosedForm,
        });
    }
    check_grid(grid, t, maturity)?;
    let terminal = terminal_from_price_model(spec, price_model, true)?;
    let sol = solve(spec, grid, &terminal)?;
    let log_n = sol.log_price(t, x);
    let bond = bond_price(spec, t, maturity, x, grid)?;
    Ok(PriceResult {
        value: log_n.exp() / bond.value,
        value_function: -log_n,
        t,
        maturity,
        method: PriceMethod::ClosedForm,
    })
}

/// One maturity on an exported term structure.
#[derive(Debug, Clone, Copy)]
pub struct TermPoint {
    pub maturity: f64,
    pub price: f64,
    pub value: f64,
    /// Continuously compounded yield `-ln P / (T - t)`.
    pub yield_: f64,
}

/// Term structure `T -> P(t0, T)` across the grid nodes of a single solve.
///
/// Uses time homogeneity of the model (all coefficients are constant), so
/// the node at `s` prices the maturity `t0 + (t_end - s)`.
pub fn term_structure(spec: &ModelSpec, grid: &TimeGrid, x: &DVector<f64>) -> Result<Vec<TermPoint>> {
    let sol = solve_bond(spec, grid)?;
    let mut points = Vec::with_capacity(grid.steps + 1);
    for i in (0..=grid.steps).rev() {
        let s = grid.node(i);
        let tau = grid.t_end - s;
        let log_p = match &sol {
            RiccatiSolution::Affine(a) => a.u[i].dot(x) + a.p[i],
            RiccatiSolution::Quadratic(q) => (&q.q[i] * x).dot(x) + q.u[i].dot(x) + q.p[i],
        };
        let price = log_p.exp();
        points.push(TermPoint {
            maturity: grid.t0 + tau,
            price,
            value: -log_p,
            yield_: if tau > 0.0 { -log_p / tau } else { spec.rate(x) },
        });
    }
    Ok(points)
}
