//! Simulation and multifractal analysis of the density of the
//! (α,1,β)-superprocess: α-stable spatial motion with (1+β)-stable
//! continuous-state branching, observed at a fixed time `t`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, derived exponents and the theoretical spectrum.
//! * [`kernels`]: the symmetric α-stable transition density, its semigroup and
//!   numerical checks of the standard kernel inequalities.
//! * [`levy`]: spectrally positive κ-stable Lévy paths with explicit jumps.
//! * [`loglaplace`]: a spectral solver for the log-Laplace equation, used as an
//!   independent oracle through the Laplace-functional duality.
//! * [`sim`]: the jump-SPDE Euler simulator, density representation
//!   `X_t = Z¹ + Z² + Z³`, and good-event diagnostics.
//! * [`mfa`]: Hölder fields, level sets, box and gauge dimensions, jump-based
//!   exponent prediction, and jump/event censuses.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernels;
pub mod levy;
pub mod loglaplace;
pub mod mfa;
pub mod model;
pub mod rng;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use mfa::{CensusParams, EventCensus, HolderConfig, HolderField, JumpCensus, SpectrumEstimate};
pub use model::{
    derive_exponents, theoretical_spectrum, validate_params, Grid1D, InitialMeasure, ModelParams,
    RunConfig, SpectrumTheory, ValidationReport,
};
pub use sim::{
    DensityDecomposition, DiagnosticsConfig, DiagnosticsReport, Jump, JumpRecord, MeasurePath,
    SimConfig, SimOutput, Simulator,
};
