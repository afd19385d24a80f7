//! Training and model configuration as flat `key=value` text.
//!
//! Defaults: BiLSTM 3×200 with dropout 0.4, FFNN 150 with dropout 0.2,
//! 1024-d contextual vectors, 300-d static vectors, a character CNN with 50
//! filters of widths 3, 4 and 5 over 8-d character embeddings, embedding
//! dropout 0.5, and Adam at 1e-3.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::decoder::DecodeMode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LstmDropoutMode {
    /// One mask per layer output, shared across time steps, between layers.
    InterLayer,
    /// One mask on the hidden state fed back at every step.
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMetric {
    /// Best development F1; earliest epoch wins ties.
    DevF1,
    /// Always the last epoch.
    Final,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lstm_size: usize,
    pub lstm_layers: usize,
    pub lstm_dropout: f64,
    pub lstm_dropout_mode: LstmDropoutMode,
    pub ffnn_size: usize,
    pub ffnn_depth: usize,
    pub ffnn_dropout: f64,
    pub ffnn_activation: Activation,
    pub contextual_dim: usize,
    /// Number of final transformer layers averaged by the tool that produced
    /// the contextual vector file. Recorded, not used.
    pub contextual_layers: usize,
    pub static_dim: usize,
    pub char_embedding_size: usize,
    pub char_cnn_size: usize,
    pub char_filter_widths: Vec<usize>,
    pub embedding_dropout: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stopping_metric: SelectionMetric,
    pub use_contextual: bool,
    pub use_static: bool,
    pub use_char: bool,
    pub use_biaffine: bool,
    pub finetune_static: bool,
    pub init_scale: f64,
    pub forget_bias: f64,
    pub decode_mode: DecodeMode,
    pub train_on_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lstm_size: 200,
            lstm_layers: 3,
            lstm_dropout: 0.4,
            lstm_dropout_mode: LstmDropoutMode::InterLayer,
            ffnn_size: 150,
            ffnn_depth: 1,
            ffnn_dropout: 0.2,
            ffnn_activation: Activation::Tanh,
            contextual_dim: 1024,
            contextual_layers: 4,
            static_dim: 300,
            char_embedding_size: 8,
            char_cnn_size: 50,
            char_filter_widths: vec![3, 4, 5],
            embedding_dropout: 0.5,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
            epochs: 50,
            batch_size: 8,
            seed: 42,
            early_stopping_metric: SelectionMetric::DevF1,
            use_contextual: true,
            use_static: true,
            use_char: true,
            use_biaffine: true,
            finetune_static: false,
            init_scale: 0.1,
            forget_bias: 1.0,
            decode_mode: DecodeMode::Nested,
            train_on_dev: false,
        }
    }
}

/// Every configuration key, in serialization order.
pub const KEYS: &[&str] = &[
    "lstm_size",
    "lstm_layers",
    "lstm_dropout",
    "lstm_dropout_mode",
    "ffnn_size",
    "ffnn_depth",
    "ffnn_dropout",
    "ffnn_activation",
    "contextual_dim",
    "contextual_layers",
    "static_dim",
    "char_embedding_size",
    "char_cnn_size",
    "char_filter_widths",
    "embedding_dropout",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "clip_norm",
    "epochs",
    "batch_size",
    "seed",
    "early_stopping_metric",
    "use_contextual",
    "use_static",
    "use_char",
    "use_biaffine",
    "finetune_static",
    "init_scale",
    "forget_bias",
    "decode_mode",
    "train_on_dev",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{}' for {}", value, key)))
}

fn parse_rate(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Config(format!("{} must be in [0, 1), got {}", key, v)));
    }
    Ok(v)
}

fn parse_positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = parse(key, value)?;
    if v == 0 {
        return Err(Error::Config(format!("{} must be positive", key)));
    }
    Ok(v)
}

impl TrainConfig {
    /// Named presets layered over the defaults.
    ///
    /// * `default`: the defaults.
    /// * `conll`: flat decoding, trained on train + dev.
    /// * `genia`: nested decoding, 50 epochs, final-epoch model.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        match name {
            "default" => {}
            "conll" => {
                c.decode_mode = DecodeMode::Flat;
                c.train_on_dev = true;
            }
            "genia" => {
                c.decode_mode = DecodeMode::Nested;
                c.epochs = 50;
                c.early_stopping_metric = SelectionMetric::Final;
            }
            other => return Err(Error::Config(format!("unknown preset '{}'", other))),
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lstm_size" => self.lstm_size = parse_positive(key, value)?,
            "lstm_layers" => self.lstm_layers = parse_positive(key, value)?,
            "lstm_dropout" => self.lstm_dropout = parse_rate(key, value)?,
            "lstm_dropout_mode" => {
                self.lstm_dropout_mode = match value {
                    "inter_layer" => LstmDropoutMode::InterLayer,
                    "recurrent" => LstmDropoutMode::Recurrent,
                    _ => return Err(Error::Config(format!("invalid lstm_dropout_mode '{}'", value))),
                }
            }
            "ffnn_size" => self.ffnn_size = parse_positive(key, value)?,
            "ffnn_depth" => self.ffnn_depth = parse_positive(key, value)?,
            "ffnn_dropout" => self.ffnn_dropout = parse_rate(key, value)?,
            "ffnn_activation" => {
                self.ffnn_activation = match value {
                    "tanh" => Activation::Tanh,
                    "sigmoid" => Activation::Sigmoid,
                    _ => return Err(Error::Config(format!("invalid ffnn_activation '{}'", value))),
                }
            }
            "contextual_dim" => self.contextual_dim = parse_positive(key, value)?,
            "contextual_layers" => self.contextual_layers = parse_positive(key, value)?,
            "static_dim" => self.static_dim = parse_positive(key, value)?,
            "char_embedding_size" => self.char_embedding_size = parse_positive(key, value)?,
            "char_cnn_size" => self.char_cnn_size = parse_positive(key, value)?,
            "char_filter_widths" => {
                let widths = value
                    .split(',')
                    .map(|w| parse_positive(key, w.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if widths.is_empty() {
                    return Err(Error::Config("char_filter_widths is empty".into()));
                }
                self.char_filter_widths = widths;
            }
            "embedding_dropout" => self.embedding_dropout = parse_rate(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_rate(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_rate(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "epochs" => self.epochs = parse_positive(key, value)?,
            "batch_size" => self.batch_size = parse_positive(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "early_stopping_metric" => {
                self.early_stopping_metric = match value {
                    "dev_f1" => SelectionMetric::DevF1,
                    "final" => SelectionMetric::Final,
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid early_stopping_metric '{}'",
                            value
                        )))
                    }
                }
            }
            "use_contextual" => self.use_contextual = parse(key, value)?,
            "use_static" => self.use_static = parse(key, value)?,
            "use_char" => self.use_char = parse(key, value)?,
            "use_biaffine" => self.use_biaffine = parse(key, value)?,
            "finetune_static" => self.finetune_static = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "forget_bias" => self.forget_bias = parse(key, value)?,
            "decode_mode" => self.decode_mode = value.parse()?,
            "train_on_dev" => self.train_on_dev = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    /// Current value of `key` in its text form.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lstm_size" => self.lstm_size.to_string(),
            "lstm_layers" => self.lstm_layers.to_string(),
            "lstm_dropout" => self.lstm_dropout.to_string(),
            "lstm_dropout_mode" => match self.lstm_dropout_mode {
                LstmDropoutMode::InterLayer => "inter_layer".into(),
                LstmDropoutMode::Recurrent => "recurrent".into(),
            },
            "ffnn_size" => self.ffnn_size.to_string(),
            "ffnn_depth" => self.ffnn_depth.to_string(),
            "ffnn_dropout" => self.ffnn_dropout.to_string(),
            "ffnn_activation" => match self.ffnn_activation {
                Activation::Tanh => "tanh".into(),
                Activation::Sigmoid => "sigmoid".into(),
            },
            "contextual_dim" => self.contextual_dim.to_string(),
            "contextual_layers" => self.contextual_layers.to_string(),
            "static_dim" => self.static_dim.to_string(),
            "char_embedding_size" => self.char_embedding_size.to_string(),
            "char_cnn_size" => self.char_cnn_size.to_string(),
            "char_filter_widths" => self
                .char_filter_widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "embedding_dropout" => self.embedding_dropout.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "early_stopping_metric" => match self.early_stopping_metric {
                SelectionMetric::DevF1 => "dev_f1".into(),
                SelectionMetric::Final => "final".into(),
            },
            "use_contextual" => self.use_contextual.to_string(),
            "use_static" => self.use_static.to_string(),
            "use_char" => self.use_char.to_string(),
            "use_biaffine" => self.use_biaffine.to_string(),
            "finetune_static" => self.finetune_static.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "forget_bias" => self.forget_bias.to_string(),
            "decode_mode" => self.decode_mode.to_string(),
            "train_on_dev" => self.train_on_dev.to_string(),
            _ => return None,
        })
    }

    /// Apply `key=value` assignments.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{}'", o)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parse `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse_text(text: &str, source_name: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text, source_name)?;
        Ok(c)
    }

    /// Apply `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(source_name, idx + 1, format!("expected key=value, got '{}'", line))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::parse(source_name, idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse_text(&text, &path.display().to_string())
    }

    /// Every key in [`KEYS`] order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(k);
            s.push('=');
            s.push_str(&self.get(k).expect("known key"));
            s.push('\n');
        }
        s
    }

    /// Token vector width implied by the enabled embedding sources.
    pub fn input_dim(&self) -> usize {
        let mut d = 0;
        if self.use_contextual {
            d += self.contextual_dim;
        }
        if self.use_static {
            d += self.static_dim;
        }
        if self.use_char {
            d += self.char_cnn_size * self.char_filter_widths.len();
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 {
            return Err(Error::Config("all embedding sources are disabled".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hyperparameter_table() {
        let c = TrainConfig::default();
        assert_eq!(c.lstm_size, 200);
        assert_eq!(c.lstm_layers, 3);
        assert_eq!(c.lstm_dropout, 0.4);
        assert_eq!(c.ffnn_size, 150);
        assert_eq!(c.ffnn_dropout, 0.2);
        assert_eq!(c.contextual_dim, 1024);
        assert_eq!(c.contextual_layers, 4);
        assert_eq!(c.static_dim, 300);
        assert_eq!(c.char_cnn_size, 50);
        assert_eq!(c.char_filter_widths, vec![3, 4, 5]);
        assert_eq!(c.char_embedding_size, 8);
        assert_eq!(c.embedding_dropout, 0.5);
        assert_eq!(c.learning_rate, 1e-3);
    }

    #[test]
    fn input_dims_for_ablations() {
        let mut c = TrainConfig::default();
        assert_eq!(c.input_dim(), 1474);
        c.use_contextual = false;
        assert_eq!(c.input_dim(), 450);
        c.use_contextual = true;
        c.use_static = false;
        assert_eq!(c.input_dim(), 1174);
        c.use_static = true;
        c.use_char = false;
        assert_eq!(c.input_dim(), 1324);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::preset("conll").unwrap();
        c.apply_overrides(&["learning_rate=0.0025", "char_filter_widths=2,3"])
            .unwrap();
        let back = TrainConfig::parse_text(&c.to_text(), "x").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_lines_are_rejected_with_line_numbers() {
        let err = TrainConfig::parse_text("# c\nlstm_size=8\nbogus=1\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:3"), "{}", err);
        assert!(TrainConfig::parse_text("lstm_size\n", "cfg").is_err());
        assert!(TrainConfig::parse_text("lstm_dropout=1.5\n", "cfg").is_err());
        assert!(TrainConfig::parse_text("epochs=0\n", "cfg").is_err());
    }

    #[test]
    fn every_key_has_a_value() {
        let c = TrainConfig::default();
        for k in KEYS {
            let v = c.get(k).unwrap();
            let mut d = TrainConfig::default();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{}", k);
        }
    }
}
