use thiserror::Error;

/// Errors raised by solvers, simulators and pricers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A backward coefficient integration produced a NaN or infinity,
    /// i.e. the Riccati solution blows up before the terminal horizon.
    #[error("non-finite coefficient at s = {s} during backward integration (finite-time blow-up)")]
    NonFinite { s: f64 },

    /// The quadratic coefficient drifted away from symmetry beyond tolerance.
    #[error("symmetry loss at s = {s}: max |q - q'| = {deviation:e}")]
    SymmetryLoss { s: f64, deviation: f64 },

    /// The requested payoff/model pairing has no closed form here.
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    /// A Girsanov kernel evaluated to NaN/inf at a visited state.
    #[error("kernel evaluated to a non-finite value at s = {s}")]
    InvalidKernel { s: f64 },

    /// A sampled recovery payoff was not strictly positive, so 1/C_T blows up.
    #[error("singular terminal condition: sampled recovery payoff <= 0")]
    SingularTerminal,

    /// Structurally invalid inputs (dimension mismatches, bad grids, ...).
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
