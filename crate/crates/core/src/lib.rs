//! Active label refinement for semantic segmentation.
//!
//! Coarse label maps are simulated from fine ones, then refined area by area
//! in active-learning cycles that pick candidate windows by random, coverage
//! or uncertainty sampling. A leave-one-out harness measures held-out accuracy
//! and acquisition rate per cycle, and the report module turns those records
//! into mean/standard-error curves.

pub mod bras;
pub mod coarse;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod predictor;
pub mod protocol;
pub mod raster;
pub mod report;
pub mod seed;
pub mod strategies;
pub mod synth;

pub use error::{Error, Result};
