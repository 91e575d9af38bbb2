//! Bayesian basket-trial engine for trials that open new baskets part-way
//! through the study.
//!
//! The crate fits independent, BHM and EXNEX models with a built-in
//! Metropolis-within-Gibbs sampler, calibrates efficacy cutoffs either under
//! the global null or robustly across several weighted truth scenarios, and
//! runs the Monte Carlo studies used to compare the IND, UNPL, PL1 and PL2
//! strategies for adding baskets.
//!
//! Module map:
//!
//! - [`model`]: design, priors, scenarios and data generation.
//! - [`inference`]: posterior fits and the quadrature oracle.
//! - [`approaches`]: routing baskets to fits and turning posteriors into decisions.
//! - [`calibration`]: global-null and robust cutoff calibration.
//! - [`simulator`]: fixed, random-truth, timing-sweep and 2+2 studies.
//! - [`config`] and [`output`]: run configuration and file formats.

pub mod approaches;
pub mod calibration;
pub mod config;
pub mod error;
pub mod inference;
pub mod model;
pub mod output;
pub mod simulator;
pub mod stream;

pub use approaches::{analyze, unpl_cutoff_assignment, ApproachKind, CutoffSet, DecisionVector};
pub use calibration::{
    calibrate, calibrate_many, empirical_quantile, equal_size_group_rule, CalibrationMethod,
    CalibrationSpec, Criterion,
};
pub use error::{Error, Result};
pub use inference::{
    fit_bhm, fit_exnex, fit_independent, oracle_independent, ModelKind, PosteriorResult,
};
pub use model::{
    generate_data, nex_params, standard_scenarios, BasketData, McmcSettings, PriorSpec, Scenario,
    TrialDesign,
};
pub use simulator::{
    run_fixed_study, run_random_truth_study, run_timing_sweep, run_two_plus_two_study,
    DiscrepancyRecord, OperatingCharacteristics,
};
pub use stream::StreamSeed;

/// Version string stamped into every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
