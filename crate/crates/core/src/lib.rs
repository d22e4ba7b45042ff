//! Ito and Stratonovich calculi, classical and quantum.
//!
//! Layers, bottom up:
//!
//! - [`operator`]: dense complex matrices and commuting rational functions of a
//!   Hermitian matrix.
//! - [`expr`]: scalar coefficient expressions in `x`, `t` (and `s` for
//!   two-point test functions) with symbolic differentiation.
//! - [`ito`]: quantum Ito matrices, the Ito table, polynomial functional
//!   calculus, Stratonovich integrand tables and vacuum moments.
//! - [`classical`]: Wiener and Poisson coefficient conversions.
//! - [`sde`]: Euler, averaging and midpoint schemes with reproducible
//!   Monte Carlo ensembles.
//! - [`hp`]: Hudson-Parthasarathy unitary coefficient maps and Heisenberg
//!   equation coefficients.
//! - [`limit`]: colored-noise to white-noise limit harness.

pub mod classical;
pub mod error;
pub mod expr;
pub mod hp;
pub mod ito;
pub mod limit;
pub mod operator;
pub mod quad;
pub mod sde;

pub use error::{Error, Result};
pub use expr::Expr;
pub use ito::ItoMatrix;
pub use operator::{OperatorMatrix, C64};
