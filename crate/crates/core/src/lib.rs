//! Term-structure pricing via optimal measure transformation: closed-form
//! exponential-affine and exponential-quadratic prices from backward
//! Riccati systems (with jump extensions), Monte Carlo simulation under
//! reference and tilted measures, and a verification harness for the
//! duality/equivalence identities the closed forms rest on.
//!
//! Modules:
//! * [`model`] — model parameterizations and validation;
//! * [`riccati`] — backward ODE solvers and coefficient functions;
//! * [`pricing`] — bond/futures/forward prices and value functions;
//! * [`kernel`] — Girsanov kernels, including the optimal one;
//! * [`simulate`] — path simulation, RN bookkeeping, MC estimators;
//! * [`verify`] — duality, FBSDE-residual, density, equivalence checks;
//! * [`credit`] — defaultable bonds and the linearized scalar equation.

pub mod credit;
pub mod error;
pub mod kernel;
pub mod model;
pub mod pricing;
pub mod riccati;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
