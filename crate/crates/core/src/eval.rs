//! Error metrics, leaderboards and win rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::SeriesKey;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("length mismatch: {actual} actual vs {predicted} predicted values")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite value")]
    NonFinite,
    #[error("percent error undefined for an actual value of zero")]
    ZeroActual,
    #[error("missing result for {key} / {model}")]
    MissingCell { key: SeriesKey, model: String },
    #[error("duplicate result for {key} / {model}")]
    DuplicateCell { key: SeriesKey, model: String },
    #[error("model '{0}' is not registered")]
    UnknownModel(String),
    #[error("model '{0}' registered twice")]
    DuplicateModel(String),
}

/// Forecast and truth for one (series, model) cell, in persons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub key: SeriesKey,
    pub model: String,
    pub years: Vec<i32>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

/// Mean squared error.
pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, yhat)| (y - yhat) * (y - yhat))
        .sum();
    Ok(sse / actual.len() as f64)
}

/// Signed relative error in percent. Displays rounded half away from zero to
/// two decimals with an explicit sign, e.g. `+0.02%`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentError(f64);

impl PercentError {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn rounded(self) -> f64 {
        // f64::round rounds half away from zero
        (self.0 * 100.0).round() / 100.0
    }
}

impl fmt::Display for PercentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.rounded();
        let sign = if r > 0.0 {
            "+"
        } else if r < 0.0 {
            "-"
        } else {
            ""
        };
        write!(f, "{sign}{:.2}%", r.abs())
    }
}

pub fn percent_error(predicted: f64, actual: f64) -> Result<PercentError, EvalError> {
    if actual == 0.0 {
        return Err(EvalError::ZeroActual);
    }
    if !predicted.is_finite() || !actual.is_finite() {
        return Err(EvalError::NonFinite);
    }
    Ok(PercentError(100.0 * (predicted - actual) / actual))
}

/// MSE per (series, model), rectangular over registered models.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    models: Vec<String>,
    rows: BTreeMap<SeriesKey, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub wins: usize,
    pub total: usize,
    pub fraction: f64,
}

impl WinRate {
    pub fn percent(&self) -> f64 {
        (self.fraction * 10000.0).round() / 100.0
    }
}

impl Leaderboard {
    /// Builds a board directly from MSE values, one row per key in the order
    /// of `models`.
    pub fn from_rows(
        models: &[&str],
        rows: impl IntoIterator<Item = (SeriesKey, Vec<f64>)>,
    ) -> Result<Self, EvalError> {
        let models = register(models.iter().map(|m| m.to_string()))?;
        let mut out = BTreeMap::new();
        for (key, row) in rows {
            if row.len() != models.len() {
                let model = models.get(row.len()).cloned().unwrap_or_default();
                return Err(EvalError::MissingCell { key, model });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EvalError::NonFinite);
            }
            if out.insert(key, row).is_some() {
                return Err(EvalError::DuplicateCell {
                    key,
                    model: models[0].clone(),
                });
            }
        }
        Ok(Self { models, rows: out })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn keys(&self) -> impl Iterator<Item = SeriesKey> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, key: SeriesKey) -> Option<&[f64]> {
        self.rows.get(&key).map(Vec::as_slice)
    }

    pub fn get(&self, key: SeriesKey, model: &str) -> Option<f64> {
        let col = self.models.iter().position(|m| m == model)?;
        self.rows.get(&key).map(|r| r[col])
    }

    /// Index of the strict row minimum; exact ties go to the earlier model.
    pub fn row_winner(&self, key: SeriesKey) -> Option<usize> {
        let row = self.rows.get(&key)?;
        let mut best = 0;
        for (i, v) in row.iter().enumerate().skip(1) {
            if *v < row[best] {
                best = i;
            }
        }
        Some(best)
    }

    pub fn win_rate(&self, model: &str) -> Result<WinRate, EvalError> {
        let col = self
            .models
            .iter()
            .position(|m| m == model)
            .ok_or_else(|| EvalError::UnknownModel(model.to_string()))?;
        let total = self.rows.len();
        let wins = self.keys().filter(|k| self.row_winner(*k) == Some(col)).count();
        let fraction = if total == 0 { 0.0 } else { wins as f64 / total as f64 };
        Ok(WinRate {
            wins,
            total,
            fraction,
        })
    }

    /// `state,race,<model...>` with one row per key.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,race");
        for m in &self.models {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (key, row) in &self.rows {
            out.push_str(&format!("{},{}", key.state, key.race));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// The JSON form: per-row MSEs with the row winner, and each model's win
    /// rate.
    pub fn summary(&self) -> LeaderboardSummary {
        let rows = self
            .rows
            .iter()
            .map(|(key, row)| SummaryRow {
                key: *key,
                mse: self.models.iter().cloned().zip(row.iter().copied()).collect(),
                winner: self.models[self.row_winner(*key).expect("row exists")].clone(),
            })
            .collect();
        let win_rates = self
            .models
            .iter()
            .map(|m| {
                let w = self.win_rate(m).expect("registered");
                (
                    m.clone(),
                    WinSummary {
                        wins: w.wins,
                        total: w.total,
                        fraction: w.fraction,
                        percent: w.percent(),
                    },
                )
            })
            .collect();
        LeaderboardSummary {
            models: self.models.clone(),
            rows,
            win_rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: SeriesKey,
    pub mse: BTreeMap<String, f64>,
    pub winner: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinSummary {
    pub wins: usize,
    pub total: usize,
    pub fraction: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardSummary {
    pub models: Vec<String>,
    pub rows: Vec<SummaryRow>,
    pub win_rates: BTreeMap<String, WinSummary>,
}

fn register(models: impl Iterator<Item = String>) -> Result<Vec<String>, EvalError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in models {
        if !seen.insert(m.clone()) {
            return Err(EvalError::DuplicateModel(m));
        }
        out.push(m);
    }
    Ok(out)
}

/// One MSE per (key, model). Every key that appears must have a result for
/// every model in `models`, and no cell may appear twice.
pub fn build_leaderboard(results: &[ForecastResult], models: &[&str]) -> Result<Leaderboard, EvalError> {
    let registered = register(models.iter().map(|m| m.to_string()))?;
    let mut cells: BTreeMap<SeriesKey, Vec<Option<f64>>> = BTreeMap::new();
    for r in results {
        let col = registered
            .iter()
            .position(|m| *m == r.model)
            .ok_or_else(|| EvalError::UnknownModel(r.model.clone()))?;
        let value = mse(&r.actual, &r.predicted)?;
        let row = cells.entry(r.key).or_insert_with(|| vec![None; registered.len()]);
        if row[col].replace(value).is_some() {
            return Err(EvalError::DuplicateCell {
                key: r.key,
                model: r.model.clone(),
            });
        }
    }
    let mut rows = BTreeMap::new();
    for (key, row) in cells {
        let filled = row
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| EvalError::MissingCell {
                    key,
                    model: registered[i].clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.insert(key, filled);
    }
    Ok(Leaderboard {
        models: registered,
        rows,
    })
}

pub fn win_rate(board: &Leaderboard, model: &str) -> Result<WinRate, EvalError> {
    board.win_rate(model)
}
