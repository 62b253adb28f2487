use super::ForecastError;

/// ARIMA order search bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArimaConfig {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self {
            max_p: 3,
            max_d: 2,
            max_q: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrentConfig {
    pub layers: usize,
    pub hidden_units: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_units: 512,
            window: 5,
            learning_rate: 1e-3,
            epochs: 72,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchDecoderConfig {
    pub context_length: usize,
    pub horizon: usize,
    pub input_patch: usize,
    /// Width of the output head; forecasts read its first `horizon` values.
    pub output_patch: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub decoder_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for PatchDecoderConfig {
    fn default() -> Self {
        Self {
            context_length: 64,
            horizon: 12,
            input_patch: 16,
            output_patch: 128,
            model_dim: 64,
            attention_heads: 4,
            decoder_layers: 2,
            learning_rate: 5e-4,
            batch_size: 64,
            epochs: 50,
        }
    }
}

impl PatchDecoderConfig {
    /// Number of patches a full context occupies.
    pub fn max_patches(&self) -> usize {
        self.context_length.div_ceil(self.input_patch)
    }
}

/// Hyperparameters for one forecaster family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelConfig {
    LinearTrend,
    Arima(ArimaConfig),
    Recurrent(RecurrentConfig),
    PatchDecoder(PatchDecoderConfig),
}

impl ModelConfig {
    pub const NAMES: [&'static str; 4] = ["lr", "arima", "rnn", "patchtf"];

    /// Default configuration for a short model name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "lr" => ModelConfig::LinearTrend,
            "arima" => ModelConfig::Arima(ArimaConfig::default()),
            "rnn" => ModelConfig::Recurrent(RecurrentConfig::default()),
            "patchtf" => ModelConfig::PatchDecoder(PatchDecoderConfig::default()),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::LinearTrend => "lr",
            ModelConfig::Arima(_) => "arima",
            ModelConfig::Recurrent(_) => "rnn",
            ModelConfig::PatchDecoder(_) => "patchtf",
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |msg: &str| Err(ForecastError::InvalidConfig(msg.to_string()));
        match self {
            ModelConfig::LinearTrend | ModelConfig::Arima(_) => Ok(()),
            ModelConfig::Recurrent(c) => {
                if c.layers == 0 || c.hidden_units == 0 || c.window == 0 || c.epochs == 0 {
                    return bad("recurrent layers, hidden_units, window and epochs must be positive");
                }
                if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
                    return bad("recurrent learning_rate must be positive");
                }
                Ok(())
            }
            ModelConfig::PatchDecoder(c) => {
                let counts = [
                    c.context_length,
                    c.horizon,
                    c.input_patch,
                    c.output_patch,
                    c.model_dim,
                    c.attention_heads,
                    c.decoder_layers,
                    c.batch_size,
                    c.epochs,
                ];
                if counts.contains(&0) {
                    return bad("patch decoder sizes must all be positive");
                }
                if c.context_length < c.input_patch {
                    return bad("context_length must be at least input_patch");
                }
                if c.horizon > c.output_patch {
                    return bad("horizon must not exceed output_patch");
                }
                if c.model_dim % c.attention_heads != 0 {
                    return bad("model_dim must be divisible by attention_heads");
                }
                if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
                    return bad("patch decoder learning_rate must be positive");
                }
                Ok(())
            }
        }
    }
}
