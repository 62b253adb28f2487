use super::{ForecastError, Forecaster, ModelConfig, NormalizedSeries};
use crate::numerics::ols_fit;

/// Straight line fitted on calendar year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTrend {
    pub slope: f64,
    pub intercept: f64,
    pub last_year: i32,
}

impl LinearTrend {
    pub fn fit(train: &NormalizedSeries) -> Result<Self, ForecastError> {
        if train.len() < 2 {
            return Err(ForecastError::TooShort {
                needed: 2,
                found: train.len(),
            });
        }
        let years: Vec<f64> = train.years().map(f64::from).collect();
        let (slope, intercept) = ols_fit(&years, &train.values)?;
        Ok(Self {
            slope,
            intercept,
            last_year: train.start_year + train.len() as i32 - 1,
        })
    }

    pub fn at(&self, year: i32) -> f64 {
        self.slope * f64::from(year) + self.intercept
    }

    pub fn predict(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon as i32).map(|k| self.at(self.last_year + k)).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinearTrendForecaster {
    fitted: Option<LinearTrend>,
}

impl Forecaster for LinearTrendForecaster {
    fn name(&self) -> &'static str {
        "lr"
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::LinearTrend
    }

    fn fit(&mut self, train: &NormalizedSeries) -> Result<(), ForecastError> {
        self.fitted = Some(LinearTrend::fit(train)?);
        Ok(())
    }

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        Ok(self.fitted.as_ref().ok_or(ForecastError::NotFitted)?.predict(horizon))
    }
}
