//! Risk-controlled routing between a device-resident model and edge-hosted
//! alternatives.
//!
//! A small gate network scores each query's embedding together with a
//! cost-weight `lambda`; a split-conformal calibration step turns those
//! scores into a threshold table with a marginal false-acceptance guarantee;
//! at serving time queries whose score clears the threshold stay on device
//! and everything else defers to a utility-ranked edge model.

pub mod artifact;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod gate;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod router;
pub mod teacher;
pub mod verify;

pub use error::{Error, Result};
