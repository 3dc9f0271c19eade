//! Estimation of the diversity of a clone repertoire from sampled read
//! counts.
//!
//! Clone intensities follow a Gamma prior, observed counts are Poisson given
//! the intensity, and clones with zero reads are never seen. The crate fits
//! the prior by EM with the unseen clones as missing data, samples posterior
//! intensities for the full repertoire, and calibrates the level of the
//! resulting percentile intervals for clonality and Shannon entropy by a
//! parametric bootstrap.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod em;
pub mod error;
pub mod model;
pub mod numerics;
pub mod par;
pub mod posterior;
pub mod sim;
pub mod uncertainty;
mod zero_block;

pub use calibration::{
    calibrate, run_pipeline, run_pipeline_stream, CalibConfig, Calibration, CoverageCurve, IntervalReport, Method,
    PipelineResult,
};
pub use em::{fit, FitConfig, FitResult};
pub use error::{Error, Result};
pub use model::{CloneCounts, DiversityDraws, Functional, GammaPrior, IntensityVector};
pub use posterior::{diversity_draws, PaddedCounts, SamplerConfig, SamplingMode};
pub use sim::{run_scenario, CoverageReport, IntensityModel, Scenario};
pub use uncertainty::{hyper_covariance, HyperCovariance};
