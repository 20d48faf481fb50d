//! Simulation and verification toolkit for the stopped-Brownian-motion
//! construction of the k-XOR Forrelation distributions.
//!
//! The crate is organised bottom-up:
//!
//! * [`wht`]: normalized Walsh–Hadamard kernels and the Forrelation statistic.
//! * [`polynomial`]: multilinear polynomials, restrictions and level weights.
//! * [`stochastic`]: correlated Brownian motion stopped on exiting a box.
//! * [`forrelation`]: the block distributions, rounding to the cube and the
//!   decision functions `F` and `F^(k)`.
//! * [`verifiers`]: Monte Carlo checks of the stochastic identities and the
//!   advantage bound.
//! * [`experiments`]: seeded, reproducible experiment runs producing
//!   [`ResultTable`]s.

pub mod error;
pub mod experiments;
pub mod forrelation;
pub mod polynomial;
pub mod stats;
pub mod stochastic;
pub mod verifiers;
pub mod wht;

pub use error::{Error, Result};
pub use experiments::{EpsilonSetting, ExperimentConfig, ExperimentKind, OutputFormat, ResultTable};
pub use forrelation::{BlockSample, BlockSampler, CubePoint, Parity, Trit};
pub use polynomial::{Literal, MultilinearPoly, Restriction, Subset};
pub use stats::{Estimate, RunContext, RunningStats};
pub use stochastic::{CovarianceSpec, SimParams, StoppedPath};
pub use verifiers::{Check, VerifierReport};
pub use wht::RealVector;
