//! Evaluation toolkit for multi-exit classifiers: confidence transforms,
//! calibration and failure-prediction metrics, budgeted exit thresholds,
//! cost-accuracy simulation and a synthetic data generator.

pub mod budget;
pub mod calibration;
pub mod data;
pub mod error;
pub mod failure;
pub mod report;
pub mod simulate;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
