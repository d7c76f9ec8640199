//! Pressure management toolkit for water distribution SCADA data.
//!
//! The crate covers the whole batch pipeline: ingesting or synthesizing
//! 15-minute pressure and flow readings, filling gaps with a calendar-feature
//! random forest, decomposing series into intrinsic mode functions, training
//! a dilated causal CNN forecaster and a CNN + LSTM inlet-pressure model, and
//! flagging anomalies from forecast residuals.

pub mod data;
pub mod error;
pub mod impute;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod signal;

pub use data::{AnomalyEvent, Dataset, Direction, SensorKind, SensorSeries, Timestamp};
pub use error::{Error, Result};
