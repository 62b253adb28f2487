//! Decoder-only transformer over patches of the input context.
//!
//! The context is cut into fixed-width patches (oldest first, left-padded), each
//! patch is embedded as one token together with its validity mask, and a stack
//! of causal pre-norm decoder blocks runs over the tokens. The head reads the
//! newest token and emits `output_patch` future values at once.
//!
//! Each context is standardized by the mean and standard deviation of its valid
//! values before embedding, and the head output is mapped back with the same
//! statistics, so the network sees shapes rather than levels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ForecastError, Forecaster, ModelConfig, NormalizedSeries, PatchDecoderConfig};
use crate::numerics::{adam_step, AdamState, Graph, NodeId, Tensor};

/// Additive attention logit for disallowed (future or padded) keys. Large
/// enough that `exp` underflows to exactly zero.
const MASKED_LOGIT: f64 = -1e9;

/// Contexts whose spread is below this are only centered, not rescaled.
const MIN_SCALE: f64 = 1e-8;

/// A context cut into equal-width patches, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    patch_len: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Patches {
    pub fn count(&self) -> usize {
        self.values.len() / self.patch_len
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-position validity; padded positions are `false`.
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.values[i * self.patch_len..(i + 1) * self.patch_len]
    }

    /// A patch is attended to when any of its positions is real data.
    pub fn token_valid(&self, i: usize) -> bool {
        self.valid[i * self.patch_len..(i + 1) * self.patch_len]
            .iter()
            .any(|v| *v)
    }

    pub fn padded_positions(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Prepends `extra` fully masked patches.
    pub fn with_masked_prefix(&self, extra: usize) -> Patches {
        let pad = extra * self.patch_len;
        let mut values = vec![0.0; pad];
        values.extend_from_slice(&self.values);
        let mut valid = vec![false; pad];
        valid.extend_from_slice(&self.valid);
        Patches {
            patch_len: self.patch_len,
            values,
            valid,
        }
    }

    /// Mean and scale of the valid values.
    fn stats(&self) -> Result<(f64, f64), ForecastError> {
        let real: Vec<f64> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .collect();
        if real.is_empty() {
            return Err(ForecastError::AllMasked);
        }
        let n = real.len() as f64;
        let mean = real.iter().sum::<f64>() / n;
        let std = (real.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok((mean, if std < MIN_SCALE { 1.0 } else { std }))
    }
}

/// Left-pads `context` with zeros to a multiple of `input_patch` and splits it.
pub fn patchify(context: &[f64], input_patch: usize) -> Result<Patches, ForecastError> {
    if context.is_empty() {
        return Err(ForecastError::Empty);
    }
    if input_patch == 0 {
        return Err(ForecastError::InvalidConfig("input_patch must be positive".into()));
    }
    let count = context.len().div_ceil(input_patch);
    let pad = count * input_patch - context.len();
    let mut values = vec![0.0; pad];
    values.extend_from_slice(context);
    let mut valid = vec![false; pad];
    valid.resize(count * input_patch, true);
    Ok(Patches {
        patch_len: input_patch,
        values,
        valid,
    })
}

/// One supervised slice: the values before a cut point and up to `horizon`
/// values after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
}

/// Every cut point of every series, with the context capped at
/// `context_length` and the target at `horizon`.
pub fn training_examples(series_set: &[Vec<f64>], config: &PatchDecoderConfig) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for series in series_set {
        for cut in 1..series.len() {
            let start = cut.saturating_sub(config.context_length);
            let end = (cut + config.horizon).min(series.len());
            out.push(TrainingExample {
                context: series[start..cut].to_vec(),
                target: series[cut..end].to_vec(),
            });
        }
    }
    out
}

const PER_LAYER: usize = 13;

/// Offsets into the flat parameter list.
mod slot {
    pub const EMBED_W: usize = 0;
    pub const EMBED_B: usize = 1;
    pub const POSITION: usize = 2;
    pub const LAYERS: usize = 3;
    // within a decoder layer
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const WK: usize = 3;
    pub const WV: usize = 4;
    pub const WO: usize = 5;
    pub const BO: usize = 6;
    pub const LN2_G: usize = 7;
    pub const LN2_B: usize = 8;
    pub const FF1_W: usize = 9;
    pub const FF1_B: usize = 10;
    pub const FF2_W: usize = 11;
    pub const FF2_B: usize = 12;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDecoder {
    config: PatchDecoderConfig,
    params: Vec<Tensor>,
}

impl PatchDecoder {
    pub fn new(config: PatchDecoderConfig, seed: u64) -> Result<Self, ForecastError> {
        ModelConfig::PatchDecoder(config).validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let token_in = 2 * config.input_patch;
        let mut params = vec![
            Tensor::uniform_fan_in(&[token_in, d], token_in, &mut rng),
            Tensor::uniform_fan_in(&[d], token_in, &mut rng),
            Tensor::uniform_fan_in(&[config.max_patches(), d], d, &mut rng),
        ];
        for _ in 0..config.decoder_layers {
            params.push(Tensor::filled(&[d], 1.0));
            params.push(Tensor::zeros(&[d]));
            for _ in 0..4 {
                params.push(Tensor::uniform_fan_in(&[d, d], d, &mut rng));
            }
            params.push(Tensor::uniform_fan_in(&[d], d, &mut rng));
            params.push(Tensor::filled(&[d], 1.0));
            params.push(Tensor::zeros(&[d]));
            params.push(Tensor::uniform_fan_in(&[d, d], d, &mut rng));
            params.push(Tensor::uniform_fan_in(&[d], d, &mut rng));
            params.push(Tensor::uniform_fan_in(&[d, d], d, &mut rng));
            params.push(Tensor::uniform_fan_in(&[d], d, &mut rng));
        }
        params.push(Tensor::filled(&[d], 1.0));
        params.push(Tensor::zeros(&[d]));
        params.push(Tensor::uniform_fan_in(&[d, config.output_patch], d, &mut rng));
        params.push(Tensor::uniform_fan_in(&[config.output_patch], d, &mut rng));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PatchDecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records the forward pass for a batch whose members all have the same
    /// patch count. Returns `[batch, output_patch]` on the caller's scale.
    fn forward_graph(&self, g: &mut Graph, ids: &[NodeId], batch: &[Patches]) -> Result<NodeId, ForecastError> {
        let cfg = &self.config;
        let b = batch.len();
        let tokens = batch.first().ok_or(ForecastError::Empty)?.count();
        let (p, d, o) = (cfg.input_patch, cfg.model_dim, cfg.output_patch);
        let heads = cfg.attention_heads;
        let dh = d / heads;

        let mut token_data = Vec::with_capacity(b * tokens * 2 * p);
        let mut mask = Vec::with_capacity(b * tokens * tokens);
        let mut scale_rows = Vec::with_capacity(b * o);
        let mut shift_rows = Vec::with_capacity(b * o);
        for patches in batch {
            if patches.patch_len() != p || patches.count() != tokens {
                return Err(ForecastError::InvalidConfig(
                    "batch members must share patch width and count".into(),
                ));
            }
            let (mean, scale) = patches.stats()?;
            for t in 0..tokens {
                let vals = patches.patch(t);
                let ok = &patches.valid()[t * p..(t + 1) * p];
                token_data.extend(vals.iter().zip(ok).map(|(v, k)| if *k { (v - mean) / scale } else { 0.0 }));
                token_data.extend(ok.iter().map(|k| if *k { 1.0 } else { 0.0 }));
            }
            for i in 0..tokens {
                for j in 0..tokens {
                    let allowed = j <= i && patches.token_valid(j);
                    mask.push(if allowed { 0.0 } else { MASKED_LOGIT });
                }
            }
            scale_rows.extend(std::iter::repeat_n(scale, o));
            shift_rows.extend(std::iter::repeat_n(mean, o));
        }

        let x = g.input(Tensor::new(&[b, tokens, 2 * p], token_data)?);
        let mask = g.input(Tensor::new(&[b, tokens, tokens], mask)?);
        let embedded = g.affine(x, ids[slot::EMBED_W], Some(ids[slot::EMBED_B]))?;
        let mut h = g.add_positional(embedded, ids[slot::POSITION])?;

        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for layer in 0..cfg.decoder_layers {
            let at = |k: usize| ids[slot::LAYERS + layer * PER_LAYER + k];
            let a = g.layer_norm(h, at(slot::LN1_G), at(slot::LN1_B))?;
            let q = g.affine(a, at(slot::WQ), None)?;
            let k = g.affine(a, at(slot::WK), None)?;
            let v = g.affine(a, at(slot::WV), None)?;
            let mut head_out = Vec::with_capacity(heads);
            for head in 0..heads {
                let (lo, hi) = (head * dh, (head + 1) * dh);
                let qh = g.slice(q, 2, lo, hi)?;
                let kh = g.slice(k, 2, lo, hi)?;
                let vh = g.slice(v, 2, lo, hi)?;
                let scores = g.matmul(qh, kh, true)?;
                let scores = g.scale(scores, inv_sqrt);
                let scores = g.add(scores, mask)?;
                let weights = g.softmax(scores);
                head_out.push(g.matmul(weights, vh, false)?);
            }
            let joined = g.concat(&head_out)?;
            let attended = g.affine(joined, at(slot::WO), Some(at(slot::BO)))?;
            h = g.add(h, attended)?;

            let a = g.layer_norm(h, at(slot::LN2_G), at(slot::LN2_B))?;
            let hidden = g.affine(a, at(slot::FF1_W), Some(at(slot::FF1_B)))?;
            let hidden = g.relu(hidden);
            let ff = g.affine(hidden, at(slot::FF2_W), Some(at(slot::FF2_B)))?;
            h = g.add(h, ff)?;
        }

        let n = ids.len();
        let h = g.layer_norm(h, ids[n - 4], ids[n - 3])?;
        let newest = g.slice(h, 1, tokens - 1, tokens)?;
        let newest = g.reshape(newest, &[b, d])?;
        let out = g.affine(newest, ids[n - 2], Some(ids[n - 1]))?;
        let scale = g.input(Tensor::new(&[b, o], scale_rows)?);
        let shift = g.input(Tensor::new(&[b, o], shift_rows)?);
        let out = g.mul(out, scale)?;
        Ok(g.add(out, shift)?)
    }

    /// Pads every member to the largest patch count in the batch.
    fn align(batch: &[Patches]) -> Vec<Patches> {
        let tokens = batch.iter().map(Patches::count).max().unwrap_or(0);
        batch
            .iter()
            .map(|p| p.with_masked_prefix(tokens - p.count()))
            .collect()
    }

    /// Full `output_patch`-wide output for one patched context.
    pub fn forward(&self, patches: &Patches) -> Result<Vec<f64>, ForecastError> {
        Ok(self.forward_batch(std::slice::from_ref(patches))?.remove(0))
    }

    pub fn forward_batch(&self, batch: &[Patches]) -> Result<Vec<Vec<f64>>, ForecastError> {
        let batch = Self::align(batch);
        let mut g = Graph::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.input(p.clone())).collect();
        let out = self.forward_graph(&mut g, &ids, &batch)?;
        Ok(g
            .value(out)
            .data()
            .chunks(self.config.output_patch)
            .map(<[f64]>::to_vec)
            .collect())
    }

    fn loss_graph(&self, examples: &[TrainingExample]) -> Result<(Graph, Vec<NodeId>, NodeId), ForecastError> {
        if examples.is_empty() {
            return Err(ForecastError::Empty);
        }
        let cfg = &self.config;
        let patched = examples
            .iter()
            .map(|ex| {
                let tail = &ex.context[ex.context.len().saturating_sub(cfg.context_length)..];
                patchify(tail, cfg.input_patch)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let batch = Self::align(&patched);
        let mut target = vec![0.0; examples.len() * cfg.horizon];
        let mut weights = vec![0.0; examples.len() * cfg.horizon];
        for (i, ex) in examples.iter().enumerate() {
            for (j, v) in ex.target.iter().take(cfg.horizon).enumerate() {
                target[i * cfg.horizon + j] = *v;
                weights[i * cfg.horizon + j] = 1.0;
            }
        }
        let mut g = Graph::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let out = self.forward_graph(&mut g, &ids, &batch)?;
        let pred = g.slice(out, 1, 0, cfg.horizon)?;
        let target = Tensor::new(&[examples.len(), cfg.horizon], target)?;
        let weights = Tensor::new(&[examples.len(), cfg.horizon], weights)?;
        let loss = g.mse(pred, target, Some(weights))?;
        Ok((g, ids, loss))
    }

    /// Mean squared error over every available target value within the
    /// horizon.
    pub fn loss(&self, examples: &[TrainingExample]) -> Result<f64, ForecastError> {
        let (g, _, loss) = self.loss_graph(examples)?;
        Ok(g.value(loss).item())
    }

    pub fn loss_and_gradients(&self, examples: &[TrainingExample]) -> Result<(f64, Vec<Tensor>), ForecastError> {
        let (g, ids, loss) = self.loss_graph(examples)?;
        let grads = g.backward(loss)?;
        let grads = ids.iter().map(|id| grads.wrt_or_zeros(&g, *id)).collect();
        Ok((g.value(loss).item(), grads))
    }

    /// Trains on every cut of every series with shuffled mini-batch Adam.
    /// Returns the model and its training loss over all examples afterwards.
    pub fn fit(
        series_set: &[Vec<f64>],
        config: PatchDecoderConfig,
        seed: u64,
    ) -> Result<(Self, f64), ForecastError> {
        let examples = training_examples(series_set, &config);
        if examples.is_empty() {
            return Err(ForecastError::Empty);
        }
        let mut model = Self::new(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut adam = AdamState::new(&model.params);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<TrainingExample> = chunk.iter().map(|i| examples[*i].clone()).collect();
                let (loss, grads) = model.loss_and_gradients(&batch)?;
                if !loss.is_finite() {
                    return Err(ForecastError::Diverged { epoch });
                }
                adam_step(&mut model.params, &grads, &mut adam, config.learning_rate)
                    .map_err(|_| ForecastError::Diverged { epoch })?;
            }
        }
        let loss = model.loss(&examples)?;
        if !loss.is_finite() {
            return Err(ForecastError::Diverged { epoch: config.epochs });
        }
        Ok((model, loss))
    }

    /// Forecasts `horizon` values following `context`; only the newest
    /// `context_length` values are used.
    pub fn predict(&self, context: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        if horizon > self.config.horizon {
            return Err(ForecastError::HorizonTooLong {
                requested: horizon,
                max: self.config.horizon,
            });
        }
        let tail = &context[context.len().saturating_sub(self.config.context_length)..];
        let mut out = self.forward(&patchify(tail, self.config.input_patch)?)?;
        out.truncate(horizon);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PatchDecoderForecaster {
    config: PatchDecoderConfig,
    seed: u64,
    fitted: Option<(PatchDecoder, Vec<f64>)>,
    training_loss: Option<f64>,
}

impl PatchDecoderForecaster {
    pub fn new(config: PatchDecoderConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            fitted: None,
            training_loss: None,
        }
    }

    pub fn training_loss(&self) -> Option<f64> {
        self.training_loss
    }
}

impl Forecaster for PatchDecoderForecaster {
    fn name(&self) -> &'static str {
        "patchtf"
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::PatchDecoder(self.config)
    }

    fn fit(&mut self, train: &NormalizedSeries) -> Result<(), ForecastError> {
        if train.len() < 2 {
            return Err(ForecastError::TooShort {
                needed: 2,
                found: train.len(),
            });
        }
        let (model, loss) = PatchDecoder::fit(std::slice::from_ref(&train.values), self.config, self.seed)?;
        self.training_loss = Some(loss);
        self.fitted = Some((model, train.values.clone()));
        Ok(())
    }

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let (model, history) = self.fitted.as_ref().ok_or(ForecastError::NotFitted)?;
        model.predict(history, horizon)
    }
}
