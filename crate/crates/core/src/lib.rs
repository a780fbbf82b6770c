//! Distributed functional scalar quantization in the high-resolution regime.
//!
//! Separate encoders each see one coordinate of a source on `[0,1]^n` and
//! quantize it with a scalar companding quantizer; the decoder wants
//! `g(X_1, ..., X_n)` rather than the source itself. This crate designs the
//! point densities that minimize mean squared error in `g`, predicts the
//! resulting distortion–rate behavior, and checks the predictions by
//! Monte Carlo simulation.

pub mod chatting;
pub mod compander;
pub mod design;
pub mod distortion;
pub mod dontcare;
pub mod equivalence;
mod error;
pub mod functions;
pub mod numeric;
pub mod rate;
pub mod report;
pub mod sampling;
pub mod sources;
pub mod verify;

pub use compander::{
    Compander, CompandingQuantizer, DistributedQuantizer, PointDensity, ScalarQuantizer,
};
pub use design::{design, DesignProblem, DesignResult, Regime};
pub use error::{Error, Result};
pub use functions::{FunctionModel, SensitivityProfile};
pub use sources::{Marginal, SourceModel};
