//! Robust multi-domain training objectives built around risk variance
//! penalization.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the numerical side of
//! the project: per-domain risk statistics, exact inner maximization over the
//! extended chi-square uncertainty set, the objective catalogue with analytic
//! risk-gradients, normal-quantile calibration of the penalty strength,
//! concentration-bound calculators, and a desk-scale colored-domain
//! experiment (data generator, small models, trainer).
//!
//! File formats, configuration and the command line live in the `rvp` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod calibration;
mod error;
pub mod meta_risk;
pub mod model;
pub mod normal;
pub mod objectives;
pub mod risk_stats;
pub mod rng;
pub mod robust_region;
pub mod sum;
pub mod synth_data;
pub mod trainer;

pub use error::{Error, Result};
pub use objectives::{LambdaSchedule, ObjectiveSpec, RiskGradient, Smoothing};
pub use risk_stats::{PooledRisks, RiskVector};
pub use robust_region::{InnerMaxResult, MixtureWeights, RobustRegion};
