use thiserror::Error;

use crate::expr::ExprError;
use crate::operator::MatrixError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("gamma mismatch: {left} vs {right}")]
    GammaMismatch { left: f64, right: f64 },
    #[error("wrong coefficient kind: {0}")]
    WrongKind(String),
    #[error("no contraction: sup|mu'| = {sup_derivative:.6} (need < 2)")]
    NoContraction { sup_derivative: f64 },
    #[error("map x -> x + mu(x) is not strictly increasing near x = {at}")]
    NotMonotone { at: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("image x + mu(x) leaves the grid at {fraction:.4} of the points")]
    GridEscape { fraction: f64 },
    #[error("implicit step does not contract: |dM| = {increment}, local Lipschitz estimate {lipschitz:.4}")]
    InnerDivergence { increment: f64, lipschitz: f64 },
    #[error("path {path}, step {step}: {source}")]
    Step {
        path: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("W = -1 is a reflection process with no Stratonovich form: kappa* + kappa W is singular (min singular value {min_singular:.3e})")]
    NotConvertible { min_singular: f64 },
    #[error("kernel not integrable: tail bound {tail:.3e} at tau = {cutoff}")]
    NotIntegrable { tail: f64, cutoff: f64 },
    #[error("quadrature failed: error estimate {estimate:.3e}")]
    QuadratureFailure { estimate: f64 },
    #[error("series not convergent: geometric ratio {ratio:.4} >= 1")]
    SeriesNotConvergent { ratio: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
