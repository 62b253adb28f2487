//! The (series × model) grid: split, normalize on train, fit, forecast the
//! test years, denormalize, record.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use popcast_core::eval::ForecastResult;
use popcast_core::forecasters::{build_forecaster, derive_seed, NormalizedSeries, PatchDecoder};
use popcast_core::ingest::Dataset;
use popcast_core::json::to_plain_json;
use popcast_core::series::{minmax_apply, minmax_fit, minmax_invert, temporal_split};
use popcast_core::{AnnualSeries, NormParams, SeriesKey, State};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: SeriesKey,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub seed: u64,
    /// Resolved configuration, every default included.
    pub config: BTreeMap<String, String>,
    /// Registration order, which also breaks leaderboard ties.
    pub models: Vec<String>,
    pub results: Vec<ForecastResult>,
    pub failures: Vec<CellFailure>,
}

impl ResultsFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("malformed results file")
    }

    pub fn to_json(&self) -> String {
        to_plain_json(self).expect("results serialize")
    }
}

/// A series cut at the split and normalized on its training part.
struct Prepared {
    key: SeriesKey,
    params: NormParams,
    train: NormalizedSeries,
    test: AnnualSeries,
}

fn prepare(series: &AnnualSeries, cfg: &RunConfig) -> Result<Prepared, String> {
    let (train, test) = temporal_split(series, &cfg.effective_split()).map_err(|e| e.to_string())?;
    let params = minmax_fit(&train);
    let values = minmax_apply(&params, train.values()).map_err(|e| e.to_string())?;
    Ok(Prepared {
        key: series.key(),
        params,
        train: NormalizedSeries::new(train.start_year(), values),
        test,
    })
}

fn finish(prep: &Prepared, model: &str, normalized: &[f64]) -> Result<ForecastResult, String> {
    let predicted = minmax_invert(&prep.params, normalized).map_err(|e| e.to_string())?;
    if predicted.len() != prep.test.len() {
        return Err(format!(
            "forecast has {} values for {} test years",
            predicted.len(),
            prep.test.len()
        ));
    }
    if let Some(bad) = predicted.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite forecast value {bad}"));
    }
    Ok(ForecastResult {
        key: prep.key,
        model: model.to_string(),
        years: prep.test.years().collect(),
        predicted,
        actual: prep.test.values().to_vec(),
    })
}

type Cell = (SeriesKey, String, Result<ForecastResult, String>);

fn single_cell(series: &AnnualSeries, model: &str, cfg: &RunConfig) -> Cell {
    let key = series.key();
    let outcome = (|| {
        let prep = prepare(series, cfg)?;
        let config = cfg.model_config(model).map_err(|e| e.to_string())?;
        let seed = derive_seed(cfg.seed, &[&key.to_string(), model]);
        let mut forecaster = build_forecaster(&config, seed);
        forecaster.fit(&prep.train).map_err(|e| e.to_string())?;
        let normalized = forecaster.predict(prep.test.len()).map_err(|e| e.to_string())?;
        finish(&prep, model, &normalized)
    })();
    (key, model.to_string(), outcome)
}

/// The patch decoder trains once per state on all of that state's training
/// series, then forecasts each from its own context.
fn state_cells(series: &[&AnnualSeries], state: State, cfg: &RunConfig) -> Vec<Cell> {
    const MODEL: &str = "patchtf";
    let mut cells = Vec::new();
    let mut ready = Vec::new();
    for s in series {
        match prepare(s, cfg) {
            Ok(p) => ready.push(p),
            Err(e) => cells.push((s.key(), MODEL.to_string(), Err(e))),
        }
    }
    if ready.is_empty() {
        return cells;
    }
    let set: Vec<Vec<f64>> = ready.iter().map(|p| p.train.values.clone()).collect();
    let seed = derive_seed(cfg.seed, &[state.code(), MODEL]);
    match PatchDecoder::fit(&set, cfg.patchtf, seed) {
        Ok((model, _)) => {
            for p in &ready {
                let outcome = model
                    .predict(&p.train.values, p.test.len())
                    .map_err(|e| e.to_string())
                    .and_then(|n| finish(p, MODEL, &n));
                cells.push((p.key, MODEL.to_string(), outcome));
            }
        }
        Err(e) => {
            for p in &ready {
                cells.push((p.key, MODEL.to_string(), Err(format!("state fit failed: {e}"))));
            }
        }
    }
    cells
}

enum Job<'a> {
    Single(&'a AnnualSeries, &'a str),
    State(State, Vec<&'a AnnualSeries>),
}

/// Runs every selected model on every series. Cells run in parallel; the
/// output order is fixed by key, then model registration order.
pub fn run_grid(dataset: &Dataset, cfg: &RunConfig) -> Result<ResultsFile> {
    cfg.validate()?;
    if dataset.is_empty() {
        bail!("dataset has no series");
    }
    let mut jobs = Vec::new();
    for model in &cfg.models {
        if model == "patchtf" {
            for state in State::ALL {
                let members: Vec<&AnnualSeries> =
                    dataset.series.values().filter(|s| s.key().state == state).collect();
                if !members.is_empty() {
                    jobs.push(Job::State(state, members));
                }
            }
        } else {
            jobs.extend(dataset.series.values().map(|s| Job::Single(s, model.as_str())));
        }
    }
    let mut cells: Vec<Cell> = jobs
        .into_par_iter()
        .flat_map_iter(|job| match job {
            Job::Single(s, m) => vec![single_cell(s, m, cfg)],
            Job::State(state, members) => state_cells(&members, state, cfg),
        })
        .collect();
    let rank = |m: &str| cfg.models.iter().position(|x| x == m).unwrap_or(usize::MAX);
    cells.sort_by(|a, b| (a.0, rank(&a.1)).cmp(&(b.0, rank(&b.1))));

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (key, model, outcome) in cells {
        match outcome {
            Ok(r) => results.push(r),
            Err(error) => failures.push(CellFailure { key, model, error }),
        }
    }
    Ok(ResultsFile {
        seed: cfg.seed,
        config: cfg.to_kv(),
        models: cfg.models.clone(),
        results,
        failures,
    })
}

/// Loads the dataset, runs the grid and writes `<out>/results.json`. Fails
/// only when the inputs are unusable or every cell failed.
pub fn cmd_run(cfg: &RunConfig) -> Result<(ResultsFile, PathBuf)> {
    let text = fs::read_to_string(&cfg.dataset)
        .with_context(|| format!("cannot read dataset {}", cfg.dataset.display()))?;
    let dataset = Dataset::from_json(&text).with_context(|| format!("dataset {}", cfg.dataset.display()))?;
    let results = run_grid(&dataset, cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    let path = cfg.out.join(RESULTS_FILE);
    fs::write(&path, results.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
    if results.results.is_empty() && !results.failures.is_empty() {
        bail!("all {} cells failed; see {}", results.failures.len(), path.display());
    }
    Ok((results, path))
}
