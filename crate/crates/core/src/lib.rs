//! Feature-parameterised fuzzing benchmark.
//!
//! Generates C fuzz targets whose control-flow and data-flow difficulty is
//! set by ten parameters, computes the exact probability that a uniformly
//! random input triggers each planted bug, runs fuzzing campaigns against the
//! targets, and relates parameter strength to fuzzer runtime with Spearman
//! rank correlation.

pub mod campaign_harness;
pub mod cli_config;
pub mod feature_model;
pub mod ground_truth;
pub mod mixer;
pub mod program_generator;
pub mod stats_analysis;
pub mod target_exec;

/// Exact trigger probability.
pub type Probability = num_rational::BigRational;

/// Rank correlation in double precision.
pub type Correlation64 = stats_analysis::Correlation<f64>;

/// Rank correlation in single precision.
pub type Correlation32 = stats_analysis::Correlation<f32>;
