//! Bernoulli prediction sets: minimal randomized prediction sets for credal
//! (second-order) predictions.
//!
//! A prediction for one input is a finite list of first-order distributions
//! whose convex hull is a credal set. The Bernoulli prediction set includes
//! label `j` independently with probability `b_j`, where `b` is the cheapest
//! vector (smallest expected size) whose expected coverage is at least the
//! target under every vertex, and hence under every distribution in the hull.
//!
//! - [`dist`]: value types and Bernoulli sampling.
//! - [`lp`]: the set-size linear program.
//! - [`sets`]: BPS and APS parameters.
//! - [`calibrate`]: risk-control calibration of the coverage target.
//! - [`credal`]: total-variation balls and the Tukey-depth diagnostic.
//! - [`metrics`]: coverage, size and stratified coverage metrics.
//! - [`data`]: file formats, splitting and synthetic generators.

pub mod calibrate;
pub mod credal;
pub mod data;
pub mod dist;
pub mod error;
pub mod lp;
pub mod metrics;
pub mod sets;

pub use dist::{
    expected_coverage, expected_size, sample_set, BernoulliParams, LabelSet, ProbabilityVector,
    SecondOrderPrediction,
};
pub use error::{Error, Result};
pub use lp::{solve_bps, solve_fractional_knapsack, LpSolution};
pub use sets::{aps_params, aps_set, bps_params, method_params, nominal_params, ApsDecision, Method};
