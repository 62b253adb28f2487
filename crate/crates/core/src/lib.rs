//! Annual population forecasting benchmark.
//!
//! The pipeline runs: [`ingest`] raw files into a [`ingest::Dataset`], split each
//! series chronologically and normalize it on its training window
//! ([`series`]), fit one of the [`forecasters`], then score the denormalized
//! forecasts with [`eval`].

pub mod eval;
pub mod forecasters;
pub mod ingest;
pub mod json;
pub mod numerics;
pub mod series;

pub use series::{AnnualSeries, NormParams, Race, SeriesKey, SplitSpec, State};
