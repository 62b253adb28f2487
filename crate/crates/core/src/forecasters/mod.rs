//! Forecaster families. Every forecaster consumes min-max normalized training
//! values and emits forecasts on the same normalized scale.

pub mod arima;
mod config;
mod linear;
pub mod patch_decoder;
pub mod recurrent;

pub use arima::{
    arima_css, arima_fit, arima_forecast, arima_select_order, difference, undifference, ArimaModel,
    ArimaOrder, ArimaParams, ArimaForecaster, OrderSelection,
};
pub use config::{ArimaConfig, ModelConfig, PatchDecoderConfig, RecurrentConfig};
pub use linear::{LinearTrend, LinearTrendForecaster};
pub use patch_decoder::{patchify, training_examples, PatchDecoder, PatchDecoderForecaster, Patches, TrainingExample};
pub use recurrent::{make_windows, RecurrentForecaster, RecurrentNet, Windows};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("series too short: need at least {needed} points, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model has not been fitted")]
    NotFitted,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("no ARIMA order in the search grid could be fitted")]
    NoCandidate,
    #[error("difference order {d} too large for {len} values")]
    DifferenceOrder { d: usize, len: usize },
    #[error("expected {expected} seed values, got {found}")]
    SeedLength { expected: usize, found: usize },
    #[error("empty input")]
    Empty,
    #[error("every input position is masked")]
    AllMasked,
    #[error("horizon {requested} exceeds the trained horizon {max}")]
    HorizonTooLong { requested: usize, max: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Training values on the normalized scale, anchored to calendar years.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub start_year: i32,
    pub values: Vec<f64>,
}

impl NormalizedSeries {
    pub fn new(start_year: i32, values: Vec<f64>) -> Self {
        Self { start_year, values }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.values.len()).map(move |i| self.start_year + i as i32)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A model that fits on one normalized series and forecasts the years that
/// immediately follow it. `predict` is repeatable for a fitted instance.
pub trait Forecaster {
    fn name(&self) -> &'static str;

    fn config(&self) -> ModelConfig;

    fn fit(&mut self, train: &NormalizedSeries) -> Result<(), ForecastError>;

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError>;
}

/// Builds the forecaster for `config`. `seed` is ignored by the deterministic
/// families.
pub fn build_forecaster(config: &ModelConfig, seed: u64) -> Box<dyn Forecaster + Send> {
    match config {
        ModelConfig::LinearTrend => Box::new(LinearTrendForecaster::default()),
        ModelConfig::Arima(c) => Box::new(ArimaForecaster::new(*c)),
        ModelConfig::Recurrent(c) => Box::new(RecurrentForecaster::new(*c, seed)),
        ModelConfig::PatchDecoder(c) => Box::new(PatchDecoderForecaster::new(*c, seed)),
    }
}

/// Mixes a global seed with string labels (series key, model name) into an
/// independent per-fit seed. FNV-1a followed by a splitmix64 finalizer.
pub fn derive_seed(global: u64, labels: &[&str]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&global.to_le_bytes());
    for label in labels {
        feed(label.as_bytes());
        feed(&[0xff]);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
