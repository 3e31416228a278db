//! Inspection analytics: Depth of Inspection (DI) and Inspection
//! Performance Metric (IPM) from shop-floor defect records, multiple linear
//! regression models that predict them from inspection parameters, and a
//! planner that inverts those models for what-if questions.
//!
//! - [`metrics`]: DI, IPM, aggregation and performance bands.
//! - [`regression`]: design matrices, least-squares fitting and prediction.
//! - [`planner`]: single-parameter inversion and parameter sweeps.
//! - [`datastore`]: record, fixture and coefficient files.

pub mod datastore;
pub mod linalg;
pub mod metrics;
pub mod planner;
pub mod regression;

pub use metrics::{Band, BandLabel, BANDS};
pub use regression::{CoefficientSet, ModelKind, PredictionResult, Regressor, RegressorVector};
