//! Seeded experiment runs and the verification suite.
//!
//! Every run is driven by an [`ExperimentConfig`] and produces a
//! [`ResultTable`] whose rows can be re-judged from the emitted numbers.

mod config;
mod runners;
mod suite;
mod table;

pub use config::{
    EpsilonSetting, ExperimentConfig, ExperimentKind, OutputFormat, Profile, SamplerKind, Thresholds,
    ENDPOINT_SAMPLER_MIN_DIM,
};
pub use runners::{
    advantage_rows, bilinear_family, concentration_rows, difference_identity_rows, doob_bound, dynkin_rows,
    named_functions, product_monomial_rows, random_boolean_functions, rounding_rows, run, run_advantage,
    run_concentration, run_dynkin, run_rounding, run_tau_tail, second_moment_rows, tau_tail_rows,
};
pub use suite::{
    fourier_rows, restriction_rows, run_suite, run_suite_with_kernel, transform_rows, SuiteParams, SMALL_DIM,
};
pub use table::{Comparator, Provenance, ResultRow, ResultTable};
