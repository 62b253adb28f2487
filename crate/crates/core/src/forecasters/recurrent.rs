//! Stacked LSTM trained one step ahead on sliding windows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ForecastError, Forecaster, ModelConfig, NormalizedSeries, RecurrentConfig};
use crate::numerics::{adam_step, AdamState, Graph, NodeId, Tensor};

/// Sliding-window samples: row `i` of `inputs` is `series[i..i + window]` and
/// `targets[i]` is `series[i + window]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub window: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.window..(i + 1) * self.window]
    }
}

pub fn make_windows(series: &[f64], window: usize) -> Result<Windows, ForecastError> {
    if window == 0 {
        return Err(ForecastError::InvalidConfig("window must be positive".into()));
    }
    if series.len() < window + 1 {
        return Err(ForecastError::TooShort {
            needed: window + 1,
            found: series.len(),
        });
    }
    let count = series.len() - window;
    let mut inputs = Vec::with_capacity(count * window);
    for i in 0..count {
        inputs.extend_from_slice(&series[i..i + window]);
    }
    Ok(Windows {
        window,
        inputs,
        targets: series[window..].to_vec(),
    })
}

/// Parameter layout: per layer a gate matrix `[input + hidden, 4·hidden]` and
/// bias `[4·hidden]` (gate blocks in input, forget, cell, output order), then
/// the output head `[hidden, 1]` and its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNet {
    config: RecurrentConfig,
    params: Vec<Tensor>,
}

impl RecurrentNet {
    pub fn new(config: RecurrentConfig, seed: u64) -> Result<Self, ForecastError> {
        ModelConfig::Recurrent(config).validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_units;
        let mut params = Vec::with_capacity(2 * config.layers + 2);
        for layer in 0..config.layers {
            let fan_in = if layer == 0 { 1 } else { h } + h;
            params.push(Tensor::uniform_fan_in(&[fan_in, 4 * h], fan_in, &mut rng));
            let mut bias = Tensor::uniform_fan_in(&[4 * h], fan_in, &mut rng);
            bias.data_mut()[h..2 * h].fill(1.0);
            params.push(bias);
        }
        params.push(Tensor::uniform_fan_in(&[h, 1], h, &mut rng));
        params.push(Tensor::uniform_fan_in(&[1], h, &mut rng));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records the forward pass for `inputs` (`[batch, steps]`) and returns the
    /// `[batch, 1]` one-step predictions.
    fn forward(&self, g: &mut Graph, ids: &[NodeId], inputs: &Tensor) -> Result<NodeId, ForecastError> {
        let (batch, steps) = (inputs.rows(), inputs.cols());
        if steps == 0 {
            return Err(ForecastError::Empty);
        }
        let mut time_major = Vec::with_capacity(batch * steps);
        for t in 0..steps {
            time_major.extend((0..batch).map(|r| inputs.data()[r * steps + t]));
        }
        let mut seq = g.input(Tensor::new(&[steps, batch, 1], time_major)?);
        for layer in 0..self.config.layers {
            seq = g.lstm(seq, ids[2 * layer], ids[2 * layer + 1])?;
        }
        let last = g.slice(seq, 0, steps - 1, steps)?;
        let last = g.reshape(last, &[batch, self.config.hidden_units])?;
        let n = self.params.len();
        Ok(g.affine(last, ids[n - 2], Some(ids[n - 1]))?)
    }

    fn loss_graph(&self, windows: &Windows) -> Result<(Graph, Vec<NodeId>, NodeId), ForecastError> {
        if windows.is_empty() {
            return Err(ForecastError::Empty);
        }
        let mut g = Graph::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let inputs = Tensor::new(&[windows.len(), windows.window], windows.inputs.clone())?;
        let pred = self.forward(&mut g, &ids, &inputs)?;
        let target = Tensor::new(&[windows.len(), 1], windows.targets.clone())?;
        let loss = g.mse(pred, target, None)?;
        Ok((g, ids, loss))
    }

    /// Mean squared one-step error over all windows.
    pub fn loss(&self, windows: &Windows) -> Result<f64, ForecastError> {
        let (g, _, loss) = self.loss_graph(windows)?;
        Ok(g.value(loss).item())
    }

    pub fn loss_and_gradients(&self, windows: &Windows) -> Result<(f64, Vec<Tensor>), ForecastError> {
        let (g, ids, loss) = self.loss_graph(windows)?;
        let grads = g.backward(loss)?;
        let grads = ids.iter().map(|id| grads.wrt_or_zeros(&g, *id)).collect();
        Ok((g.value(loss).item(), grads))
    }

    /// Full-batch Adam for the configured number of epochs. Returns the
    /// training loss after the final update.
    pub fn train(&mut self, windows: &Windows) -> Result<f64, ForecastError> {
        let mut adam = AdamState::new(&self.params);
        for epoch in 0..self.config.epochs {
            let (loss, grads) = self.loss_and_gradients(windows)?;
            if !loss.is_finite() {
                return Err(ForecastError::Diverged { epoch });
            }
            adam_step(&mut self.params, &grads, &mut adam, self.config.learning_rate)
                .map_err(|_| ForecastError::Diverged { epoch })?;
        }
        let loss = self.loss(windows)?;
        if !loss.is_finite() {
            return Err(ForecastError::Diverged {
                epoch: self.config.epochs,
            });
        }
        Ok(loss)
    }

    /// One-step prediction for a single input window.
    pub fn predict_next(&self, window: &[f64]) -> Result<f64, ForecastError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.input(p.clone())).collect();
        let inputs = Tensor::new(&[1, window.len()], window.to_vec())?;
        let out = self.forward(&mut g, &ids, &inputs)?;
        Ok(g.value(out).item())
    }

    /// Autoregressive rollout: each prediction is appended to the window and
    /// the oldest value dropped.
    pub fn rollout(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let w = self.config.window;
        if history.len() < w {
            return Err(ForecastError::TooShort {
                needed: w,
                found: history.len(),
            });
        }
        let mut window = history[history.len() - w..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.predict_next(&window)?;
            out.push(next);
            window.remove(0);
            window.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentForecaster {
    config: RecurrentConfig,
    seed: u64,
    fitted: Option<(RecurrentNet, Vec<f64>)>,
    training_loss: Option<f64>,
}

impl RecurrentForecaster {
    pub fn new(config: RecurrentConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            fitted: None,
            training_loss: None,
        }
    }

    /// Training MSE after the last epoch of the most recent fit.
    pub fn training_loss(&self) -> Option<f64> {
        self.training_loss
    }
}

impl Forecaster for RecurrentForecaster {
    fn name(&self) -> &'static str {
        "rnn"
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::Recurrent(self.config)
    }

    fn fit(&mut self, train: &NormalizedSeries) -> Result<(), ForecastError> {
        let windows = make_windows(&train.values, self.config.window)?;
        let mut net = RecurrentNet::new(self.config, self.seed)?;
        self.training_loss = Some(net.train(&windows)?);
        self.fitted = Some((net, train.values.clone()));
        Ok(())
    }

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let (net, history) = self.fitted.as_ref().ok_or(ForecastError::NotFitted)?;
        net.rollout(history, horizon)
    }
}
