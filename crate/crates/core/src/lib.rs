//! Sea-level effects on regional growth: tide-gauge ingestion, decadal
//! panel construction, fixed-effects estimation with clustered errors,
//! effect curves and scenario projections.

pub mod effects;
pub mod error;
pub mod estimator;
pub mod panel;
pub mod projector;
pub mod rlr;
pub mod specs;
pub mod validation;

pub use error::{Error, Result};
