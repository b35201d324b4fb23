//! Surrogate modeling and calibration toolkit for solar irradiance mapping.
//!
//! Fuses noisy field measurements with biased simulator output to produce
//! spatial and spatio-temporal irradiance predictions with uncertainty:
//!
//! - [`data`]: ingestion of station/simulator records with explicit missingness;
//! - [`gp`]: exact Gaussian-process regression with likelihood-trained
//!   hyperparameters;
//! - [`localgp`]: per-query local approximate GP prediction for large or
//!   nonstationary data;
//! - [`calibrate`]: discrepancy (bias) estimation against simulator
//!   surrogates and inverse-variance fusion of independent predictors;
//! - [`seasonal`]: per-site harmonic regression with GP smoothing of the
//!   coefficient fields over space, plus daily bias correction;
//! - [`design`]: maximin space-filling designs, fixed-grid snapping,
//!   bilinear interpolation, and query-document construction;
//! - [`eval`]: leave-one-site-out cross validation, accuracy/coverage
//!   metrics, paired significance tests, and a proper scoring rule.

pub mod calibrate;
pub mod data;
pub mod design;
pub mod error;
pub mod eval;
pub mod gp;
pub mod localgp;
mod optim;
pub mod seasonal;

pub use error::{Error, Result};
pub use gp::Prediction;
