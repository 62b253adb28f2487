//! Run configuration: defaults, overridden by a `section.key = value` file,
//! overridden by flags.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use popcast_core::forecasters::{ArimaConfig, ModelConfig, PatchDecoderConfig, RecurrentConfig};
use popcast_core::SplitSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub models: Vec<String>,
    pub split: SplitSpec,
    pub validation: bool,
    pub seed: u64,
    pub arima: ArimaConfig,
    pub rnn: RecurrentConfig,
    pub patchtf: PatchDecoderConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.json"),
            models: ModelConfig::NAMES.iter().map(|m| m.to_string()).collect(),
            split: SplitSpec::default_test(),
            validation: false,
            seed: 0,
            arima: ArimaConfig::default(),
            rnn: RecurrentConfig::default(),
            patchtf: PatchDecoderConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Parses `section.key = value` lines. Blank lines and `#` comments are
/// skipped; a repeated key keeps the last value.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected 'section.key = value'", i + 1))?;
        let key = key.trim();
        if !key.contains('.') {
            bail!("config line {}: key '{key}' has no section", i + 1);
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse '{value}': {e}"))
}

impl RunConfig {
    /// Sets one non-split key; see [`RunConfig::apply`] for split years.
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.dataset" => self.dataset = PathBuf::from(value),
            "run.models" => self.models = parse_models(value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.validation" => self.validation = parse(key, value)?,
            "run.out" => self.out = PathBuf::from(value),
            "arima.max_p" => self.arima.max_p = parse(key, value)?,
            "arima.max_d" => self.arima.max_d = parse(key, value)?,
            "arima.max_q" => self.arima.max_q = parse(key, value)?,
            "rnn.layers" => self.rnn.layers = parse(key, value)?,
            "rnn.hidden_units" => self.rnn.hidden_units = parse(key, value)?,
            "rnn.window" => self.rnn.window = parse(key, value)?,
            "rnn.learning_rate" => self.rnn.learning_rate = parse(key, value)?,
            "rnn.epochs" => self.rnn.epochs = parse(key, value)?,
            "patchtf.context_length" => self.patchtf.context_length = parse(key, value)?,
            "patchtf.horizon" => self.patchtf.horizon = parse(key, value)?,
            "patchtf.input_patch" => self.patchtf.input_patch = parse(key, value)?,
            "patchtf.output_patch" => self.patchtf.output_patch = parse(key, value)?,
            "patchtf.model_dim" => self.patchtf.model_dim = parse(key, value)?,
            "patchtf.attention_heads" => self.patchtf.attention_heads = parse(key, value)?,
            "patchtf.decoder_layers" => self.patchtf.decoder_layers = parse(key, value)?,
            "patchtf.learning_rate" => self.patchtf.learning_rate = parse(key, value)?,
            "patchtf.batch_size" => self.patchtf.batch_size = parse(key, value)?,
            "patchtf.epochs" => self.patchtf.epochs = parse(key, value)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    /// Applies settings in order. The two split years are checked together
    /// after everything else, so their relative order does not matter.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let (mut train_end, mut test_end) = (self.split.train_end_year(), self.split.test_end_year());
        for (k, v) in pairs {
            match k {
                "split.train_end" => train_end = parse(k, v)?,
                "split.test_end" => test_end = parse(k, v)?,
                _ => self.set(k, v)?,
            }
        }
        self.split = SplitSpec::new(train_end, test_end)
            .with_context(|| format!("invalid split: train through {train_end}, test through {test_end}"))?;
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let kv = parse_kv(text)?;
        self.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// The split actually evaluated: the validation years when `validation`
    /// is set, otherwise the configured test split.
    pub fn effective_split(&self) -> SplitSpec {
        if self.validation {
            SplitSpec::default_validation()
        } else {
            self.split
        }
    }

    pub fn model_config(&self, name: &str) -> Result<ModelConfig> {
        Ok(match name {
            "lr" => ModelConfig::LinearTrend,
            "arima" => ModelConfig::Arima(self.arima),
            "rnn" => ModelConfig::Recurrent(self.rnn),
            "patchtf" => ModelConfig::PatchDecoder(self.patchtf),
            other => bail!("unknown model '{other}'"),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.models {
            self.model_config(m)?.validate()?;
        }
        Ok(())
    }

    /// Every setting except the output directory, so that results written to
    /// different directories stay byte-identical.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("run.dataset", self.dataset.display().to_string());
        put("run.models", self.models.join(","));
        put("run.seed", self.seed.to_string());
        put("run.validation", self.validation.to_string());
        put("split.train_end", self.split.train_end_year().to_string());
        put("split.test_end", self.split.test_end_year().to_string());
        put("arima.max_p", self.arima.max_p.to_string());
        put("arima.max_d", self.arima.max_d.to_string());
        put("arima.max_q", self.arima.max_q.to_string());
        put("rnn.layers", self.rnn.layers.to_string());
        put("rnn.hidden_units", self.rnn.hidden_units.to_string());
        put("rnn.window", self.rnn.window.to_string());
        put("rnn.learning_rate", self.rnn.learning_rate.to_string());
        put("rnn.epochs", self.rnn.epochs.to_string());
        let p = &self.patchtf;
        put("patchtf.context_length", p.context_length.to_string());
        put("patchtf.horizon", p.horizon.to_string());
        put("patchtf.input_patch", p.input_patch.to_string());
        put("patchtf.output_patch", p.output_patch.to_string());
        put("patchtf.model_dim", p.model_dim.to_string());
        put("patchtf.attention_heads", p.attention_heads.to_string());
        put("patchtf.decoder_layers", p.decoder_layers.to_string());
        put("patchtf.learning_rate", p.learning_rate.to_string());
        put("patchtf.batch_size", p.batch_size.to_string());
        put("patchtf.epochs", p.epochs.to_string());
        kv
    }

    /// `to_kv` rendered in the config file format.
    pub fn to_config_text(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Rebuilds a configuration from an embedded key-value map.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }
}

pub fn parse_models(list: &str) -> Result<Vec<String>> {
    let mut models: Vec<String> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if ModelConfig::by_name(name).is_none() {
            bail!(
                "unknown model '{name}', expected one of {}",
                ModelConfig::NAMES.join(", ")
            );
        }
        if models.iter().any(|m| m == name) {
            bail!("model '{name}' listed twice");
        }
        models.push(name.to_string());
    }
    if models.is_empty() {
        bail!("no models selected");
    }
    Ok(models)
}
