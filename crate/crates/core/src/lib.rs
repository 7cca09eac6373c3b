//! Tropical-cyclone intensity forecasting.
//!
//! The crate turns best-track records into seven-feature sequences
//! (latitude, longitude, MSWS, central pressure, step distance, heading and
//! sea-surface temperature) and trains a stacked bidirectional LSTM, written
//! from scratch, that forecasts Maximum Sustained Surface Wind Speed for `t2`
//! future 3-hour steps from `t1` observed steps.
//!
//! Module map:
//!
//! - [`ingest`]: delimited best-track parsing, linear imputation, validation.
//! - [`geo`], [`features`], [`sst`]: motion features, SST matching, min-max scaling,
//!   intensity grades.
//! - [`window`]: supervised `(t1 -> t2)` samples, storm-level folds, holdouts.
//! - [`nn`]: matrices, LSTM/BiLSTM layers, dense head, dropout, MSE, BPTT, Adam,
//!   finite-difference gradient checks, checkpoints.
//! - [`train`]: training loop, evaluation, cross-validation, forecasting.
//! - [`cli`]: the `cyclone` command-line front end.

pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod nn;
pub mod sst;
pub mod synthetic;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use features::{FeatureFrame, FeatureVector, Grade, ScalerParams, FEATURE_COUNT};
pub use ingest::{CycloneTrack, Fix, GappyTrack, IngestReport};
pub use nn::{Architecture, NetworkParams};
pub use sst::SstGrid;
pub use train::{EvalReport, ForecastResult, TrainConfig, TrainedModel};
pub use window::{FoldPlan, WindowSample, WindowSpec};
