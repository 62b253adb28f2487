//! ARIMA(p, d, q) estimated by conditional sum of squares, with exhaustive AIC
//! order search.
//!
//! The differenced series `w` follows
//! `w_t = c + Σ φ_i w_{t-i} + Σ θ_j e_{t-j} + e_t`.

use super::{ArimaConfig, ForecastError, Forecaster, ModelConfig, NormalizedSeries};
use crate::numerics::{nelder_mead, SimplexOptions};

/// Added to the objective when the AR or MA polynomial has a root on or
/// inside the unit circle.
pub const ROOT_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    fn burn_in(&self) -> usize {
        self.p.max(self.q)
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaParams {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: f64,
}

impl ArimaParams {
    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.ar.clone();
        v.extend(&self.ma);
        v.push(self.intercept);
        v
    }

    fn from_slice(x: &[f64], p: usize, q: usize) -> Self {
        Self {
            ar: x[..p].to_vec(),
            ma: x[p..p + q].to_vec(),
            intercept: x[p + q],
        }
    }
}

/// Applies first differences `d` times.
pub fn difference(values: &[f64], d: usize) -> Result<Vec<f64>, ForecastError> {
    if values.is_empty() || d > values.len() - 1 {
        return Err(ForecastError::DifferenceOrder { d, len: values.len() });
    }
    let mut out = values.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverts [`difference`]. `seeds[k]` is the first value of the series
/// differenced `k` times, so `seeds.len()` is the differencing order.
pub fn undifference(diffed: &[f64], seeds: &[f64]) -> Vec<f64> {
    let mut out = diffed.to_vec();
    for &seed in seeds.iter().rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        level.push(seed);
        let mut acc = seed;
        for step in &out {
            acc += step;
            level.push(acc);
        }
        out = level;
    }
    out
}

/// The leading value of each differencing level, as consumed by
/// [`undifference`].
fn difference_seeds(values: &[f64], d: usize) -> Vec<f64> {
    let mut seeds = Vec::with_capacity(d);
    let mut level = values.to_vec();
    for _ in 0..d {
        seeds.push(level[0]);
        level = level.windows(2).map(|w| w[1] - w[0]).collect();
    }
    seeds
}

/// One-step residuals. The first `max(p, q)` points are burn-in with zero
/// residual; pre-sample residuals are zero.
fn css_residuals(params: &ArimaParams, series: &[f64]) -> Vec<f64> {
    let start = params.ar.len().max(params.ma.len());
    let mut resid = vec![0.0; series.len()];
    for t in start..series.len() {
        let mut pred = params.intercept;
        for (i, phi) in params.ar.iter().enumerate() {
            pred += phi * series[t - 1 - i];
        }
        for (j, theta) in params.ma.iter().enumerate() {
            pred += theta * resid[t - 1 - j];
        }
        resid[t] = series[t] - pred;
    }
    resid
}

/// Conditional sum of squared residuals of an ARMA model on an already
/// differenced series.
pub fn arima_css(params: &ArimaParams, series: &[f64]) -> Result<f64, ForecastError> {
    let needed = params.ar.len() + params.ma.len() + 1;
    if series.len() < needed {
        return Err(ForecastError::TooShort {
            needed,
            found: series.len(),
        });
    }
    Ok(css_residuals(params, series).iter().map(|e| e * e).sum())
}

/// True when every root of `1 - Σ a_i z^i` lies strictly outside the unit
/// circle, tested by the Schur-Cohn step-down recursion.
fn roots_outside_unit_circle(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let m = a.len() - 1;
        let denom = 1.0 - k * k;
        a = (0..m).map(|j| (a[j] + k * a[m - 1 - j]) / denom).collect();
    }
    true
}

fn admissible(params: &ArimaParams) -> bool {
    let neg_ma: Vec<f64> = params.ma.iter().map(|t| -t).collect();
    roots_outside_unit_circle(&params.ar) && roots_outside_unit_circle(&neg_ma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaModel {
    order: ArimaOrder,
    params: ArimaParams,
    residual_variance: f64,
    residuals: Vec<f64>,
    differenced: Vec<f64>,
    training: Vec<f64>,
}

impl ArimaModel {
    /// Model with given coefficients conditioned on `training` (undifferenced).
    pub fn from_parameters(
        order: ArimaOrder,
        params: ArimaParams,
        training: &[f64],
    ) -> Result<Self, ForecastError> {
        if params.ar.len() != order.p || params.ma.len() != order.q {
            return Err(ForecastError::InvalidConfig(format!(
                "coefficient counts do not match order {order}"
            )));
        }
        let differenced = difference(training, order.d)?;
        let sse = arima_css(&params, &differenced)?;
        let n_eff = differenced.len() - order.burn_in();
        Ok(Self {
            order,
            residuals: css_residuals(&params, &differenced),
            residual_variance: sse / n_eff as f64,
            params,
            differenced,
            training: training.to_vec(),
        })
    }

    pub fn order(&self) -> ArimaOrder {
        self.order
    }

    pub fn params(&self) -> &ArimaParams {
        &self.params
    }

    pub fn ar_coefficients(&self) -> &[f64] {
        &self.params.ar
    }

    pub fn ma_coefficients(&self) -> &[f64] {
        &self.params.ma
    }

    pub fn intercept(&self) -> f64 {
        self.params.intercept
    }

    pub fn residual_variance(&self) -> f64 {
        self.residual_variance
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Points that contribute to the conditional likelihood.
    pub fn effective_observations(&self) -> usize {
        self.differenced.len() - self.order.burn_in()
    }

    /// `n_eff · ln σ² + 2 (p + q + 1)`.
    pub fn aic(&self) -> f64 {
        let k = (self.order.p + self.order.q + 1) as f64;
        self.effective_observations() as f64 * self.residual_variance.ln() + 2.0 * k
    }
}

/// Fits an ARIMA model of fixed order by minimizing the conditional sum of
/// squares with Nelder-Mead, started from zero coefficients and the mean of
/// the differenced series.
pub fn arima_fit(series: &[f64], order: ArimaOrder) -> Result<ArimaModel, ForecastError> {
    let needed = order.p + order.q + order.d + 3;
    if series.len() < needed {
        return Err(ForecastError::TooShort {
            needed,
            found: series.len(),
        });
    }
    let differenced = difference(series, order.d)?;
    let mean = differenced.iter().sum::<f64>() / differenced.len() as f64;
    let (p, q) = (order.p, order.q);

    if p == 0 && q == 0 {
        // the objective is a quadratic in the intercept alone
        let params = ArimaParams {
            ar: vec![],
            ma: vec![],
            intercept: mean,
        };
        return ArimaModel::from_parameters(order, params, series);
    }

    let objective = |x: &[f64]| {
        let params = ArimaParams::from_slice(x, p, q);
        let sse: f64 = css_residuals(&params, &differenced).iter().map(|e| e * e).sum();
        if admissible(&params) {
            sse
        } else {
            sse + ROOT_PENALTY
        }
    };
    let start = ArimaParams {
        ar: vec![0.0; p],
        ma: vec![0.0; q],
        intercept: mean,
    };
    let options = SimplexOptions {
        max_iters: 2000 * (p + q + 1),
        tolerance: 1e-9,
        initial_step: 0.1,
    };
    let first = nelder_mead(objective, &start.to_vec(), &options)?;
    // a restart from the optimum escapes premature simplex collapse
    let polished = nelder_mead(
        objective,
        &first.x,
        &SimplexOptions {
            initial_step: 0.02,
            ..options
        },
    )?;
    ArimaModel::from_parameters(order, ArimaParams::from_slice(&polished.x, p, q), series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSelection {
    pub model: ArimaModel,
    pub aic: f64,
    /// Every candidate that could be fitted, with its AIC, in search order.
    pub candidates: Vec<(ArimaOrder, f64)>,
}

/// Exhaustive AIC search over `p ≤ max_p`, `d ≤ max_d`, `q ≤ max_q`. Ties go
/// to the smaller `p + q + d`, then to the lexicographically smaller
/// `(p, d, q)`.
pub fn arima_select_order(
    series: &[f64],
    bounds: &ArimaConfig,
) -> Result<OrderSelection, ForecastError> {
    let mut best: Option<(ArimaModel, f64)> = None;
    let mut candidates = Vec::new();
    for p in 0..=bounds.max_p {
        for d in 0..=bounds.max_d {
            for q in 0..=bounds.max_q {
                let order = ArimaOrder::new(p, d, q);
                let Ok(model) = arima_fit(series, order) else { continue };
                let aic = model.aic();
                if aic.is_nan() {
                    continue;
                }
                candidates.push((order, aic));
                let better = match &best {
                    None => true,
                    Some((incumbent, best_aic)) => {
                        let rank = |o: ArimaOrder| (o.p + o.q + o.d, o.p, o.d, o.q);
                        aic < *best_aic
                            || (aic == *best_aic && rank(order) < rank(incumbent.order))
                    }
                };
                if better {
                    best = Some((model, aic));
                }
            }
        }
    }
    let (model, aic) = best.ok_or(ForecastError::NoCandidate)?;
    Ok(OrderSelection {
        model,
        aic,
        candidates,
    })
}

/// Recursive multi-step forecast with future shocks set to zero, integrated
/// back to the level of the training series.
pub fn arima_forecast(model: &ArimaModel, horizon: usize) -> Vec<f64> {
    if horizon == 0 {
        return Vec::new();
    }
    let n = model.differenced.len();
    let mut w = model.differenced.clone();
    let mut e = model.residuals.clone();
    for t in n..n + horizon {
        let mut pred = model.params.intercept;
        for (i, phi) in model.params.ar.iter().enumerate() {
            pred += phi * w[t - 1 - i];
        }
        for (j, theta) in model.params.ma.iter().enumerate() {
            pred += theta * e[t - 1 - j];
        }
        w.push(pred);
        e.push(0.0);
    }
    let seeds = difference_seeds(&model.training, model.order.d);
    let levels = undifference(&w, &seeds);
    levels[levels.len() - horizon..].to_vec()
}

/// ARIMA with automatic order selection.
#[derive(Debug, Clone)]
pub struct ArimaForecaster {
    bounds: ArimaConfig,
    fitted: Option<ArimaModel>,
}

impl ArimaForecaster {
    pub fn new(bounds: ArimaConfig) -> Self {
        Self {
            bounds,
            fitted: None,
        }
    }

    pub fn model(&self) -> Option<&ArimaModel> {
        self.fitted.as_ref()
    }
}

impl Forecaster for ArimaForecaster {
    fn name(&self) -> &'static str {
        "arima"
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::Arima(self.bounds)
    }

    fn fit(&mut self, train: &NormalizedSeries) -> Result<(), ForecastError> {
        self.fitted = Some(arima_select_order(&train.values, &self.bounds)?.model);
        Ok(())
    }

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let model = self.fitted.as_ref().ok_or(ForecastError::NotFitted)?;
        Ok(arima_forecast(model, horizon))
    }
}
