use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the laboratory can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("diffusion matrix not symmetric at t = {t}: max |Q - Q^T| = {asymmetry:e}")]
    SymmetryViolation { t: f64, asymmetry: f64 },

    #[error("{divergent} of {total} paths left the blow-up guard (step size too large or drift not dissipative)")]
    Blowup { divergent: usize, total: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("kernel density estimation limited to d <= 3, got d = {0}")]
    DimensionTooHigh(usize),

    #[error(
        "function is not convex and increasing on the sampled grid (first violation at y = {at})"
    )]
    NotConvex { at: f64 },

    #[error("1/h is not integrable at +infinity (tail decay exponent {decay:.3})")]
    TailNotIntegrable { decay: f64 },

    #[error("degenerate exponents: need 1 < p < q, got p = {p}, q = {q}")]
    DegenerateExponents { p: f64, q: f64 },

    #[error("exponential moment e^(lambda|x|^2) with lambda = {lambda} failed to stabilise (tail index {tail_index:.3})")]
    ExpMomentDiverged { lambda: f64, tail_index: f64 },

    #[error("check requires the {required} regime, operator is {found}")]
    RegimeMismatch {
        required: &'static str,
        found: String,
    },

    #[error("ill-conditioned fit: {0}")]
    FitIllConditioned(String),

    #[error("adaptive quadrature failed to converge on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },

    #[error("function has no closed-form Gaussian integral: {0}")]
    UnsupportedFunction(String),

    #[error("operation requires constant coefficients")]
    NotConstantCoefficient,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
