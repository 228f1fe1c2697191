//! Duration-deconfounded watch-time prediction.
//!
//! Watch time grows with video length, and longer videos also get shown more,
//! so a regressor fit on logged data learns a duration-skewed target. D2Q
//! removes the exposure path by regressing within-duration-group quantiles
//! instead of seconds. The crate ships the D2Q / Res-D2Q predictors, the VR
//! and WLR baselines, ranking metrics, a synthetic confounded world with exact
//! oracles, and a sweep harness.

pub mod data;
pub mod distribution;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod predictors;
pub mod synthgen;

pub use error::{Error, Result};
