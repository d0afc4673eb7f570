//! Numerical laboratory for CP-flows over a truncated infinite tensor product.
//!
//! The crate is organised bottom-up:
//!
//! - [`halfline`]: exponential-kernel vectors on `L²(0,∞)`, the maps Λ, Γ, Φ and
//!   a midpoint grid backend for translation.
//! - [`tensorspace`]: product vectors with a reference tail, the shift `S₀`,
//!   the representation `π` and the limit operator Δ.
//! - [`weights`]: normal functionals, the boundary weight series `ω¹`, `ω^z`,
//!   the unital family `ω = ω¹ + ρ(Δ)ξ` and generalized boundary representations.
//! - [`semigroups`]: the semigroups `U_z` realised by transport stepping.
//! - [`gauge`]: gauge parameters `(a,b,c,y)`, their action on units and the
//!   composition law.
//! - [`cornercheck`]: Choi-matrix positivity, subordination and the
//!   hypermaximality witness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cornercheck;
pub mod gauge;
pub mod halfline;
pub mod semigroups;
pub mod tensorspace;
pub mod weights;

mod linalg;

pub use num_complex::Complex64;

pub use cornercheck::{choi_matrix, choi_min_eig, CpVerdict};
pub use gauge::{GaugeClass, GaugeParam, UnitAction};
pub use halfline::{ExpKernelVector, ExpMultiplier, GridVector, HalfLineOperator};
pub use semigroups::FlowState;
pub use tensorspace::{KBasis, KOperator, LambdaKind, LambdaSequence, ProductVector};
pub use weights::{BoundaryOperator, BoundaryWeight, Functional, WeightSeriesConfig};

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("unsupported representation: {0}")]
    UnsupportedRepresentation(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("truncation exceeded: need {needed} factors, have {available}")]
    TruncationExceeded { needed: usize, available: usize },

    #[error("series did not converge after {terms} terms (last estimate {last:e}, error {error:e})")]
    NonConvergence { terms: usize, last: f64, error: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("near-singular normalization: ν(Λ(Δ)) = {0}")]
    NearSingular(f64),

    #[error("linear system not invertible (condition estimate {0:e})")]
    NotInvertible(f64),

    #[error("precondition violated: {what} (measured {measured:e})")]
    Precondition { what: String, measured: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {what} (eigenvalue {eigenvalue:e})")]
    InvalidInput { what: String, eigenvalue: f64 },

    #[error("degenerate direction: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
