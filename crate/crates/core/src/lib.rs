//! Stein-method distance bounds for sums, quadratic forms and multiple
//! stochastic integrals of independent random variables, with Monte Carlo
//! and algebraic checks.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`).
//! The aliases below fix the scalar to `f64`; the Monte Carlo harness in
//! [`verify`] and the CSV helpers in [`io`] work in `f64` only.

pub mod bounds;
pub mod chaos;
pub mod distributions;
pub mod io;
pub mod quadrature;
pub mod scalar;
pub mod special;
pub mod verify;

pub use bounds::{BoundError, CurveFamily, FormulaId, Metric};
pub use chaos::ChaosError;
pub use distributions::DistError;
pub use scalar::Real;

pub type Distribution = distributions::Distribution<f64>;
pub type CellProfile = chaos::CellProfile<f64>;
pub type ChaosTensor = chaos::ChaosTensor<f64>;
pub type ChaosSample = chaos::ChaosSample<f64>;
pub type BoundReport = bounds::BoundReport<f64>;
pub type DualBound = bounds::DualBound<f64>;
pub type IndexSetFamily = bounds::IndexSetFamily<f64>;
pub type CombCltQuantities = bounds::CombCltQuantities<f64>;
pub type CurveRow = bounds::CurveRow<f64>;
