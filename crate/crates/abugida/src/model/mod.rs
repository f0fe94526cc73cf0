//! A small trainable encoder-decoder transformer over token ids.
//!
//! Two encoder and two decoder layers by default, multi-head attention,
//! post-norm sublayers (x = LayerNorm(x + Dropout(Sublayer(x)))), sinusoidal
//! positions, label-smoothed cross-entropy, adaptive-moment training with
//! inverse-square-root learning-rate decay, and greedy or length-normalized
//! beam decoding. Everything runs on the CPU in plain loops; the scale is
//! deliberately desk-sized.

mod checkpoint;
mod decode;
mod tensor;
mod train;
mod transformer;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError};
pub use decode::{beam_decode, greedy_decode};
pub use tensor::Param;
pub use train::{
    evaluate, learning_rate, train, EvalMetrics, StopReason, TrainError, TrainLog,
    ValidationRecord,
};
pub use transformer::{init_model, Model, ModelError};

use thiserror::Error;

/// Hyperparameters and training knobs. The architectural fields mirror the
/// reference configuration; the optimizer constants are conventional values
/// recorded here so they are part of every saved config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub base_lr: f64,
    /// Steps before inverse-square-root decay begins.
    pub lr_decay_start: u64,
    pub max_length: usize,
    pub beam_size: usize,
    pub length_norm_alpha: f64,
    /// Validations without dev cross-entropy improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Share the output projection with the target embedding table.
    pub tied_output: bool,
    /// Token budget per batch (padded positions included).
    pub batch_tokens: usize,
    /// Steps between validations.
    pub valid_every: u64,
    pub max_epochs: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Exponential parameter smoothing for validation and decoding.
    pub ema: bool,
    pub ema_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            enc_depth: 2,
            dec_depth: 2,
            heads: 8,
            model_dim: 256,
            ff_dim: 1024,
            dropout: 0.3,
            label_smoothing: 0.1,
            base_lr: 0.0003,
            lr_decay_start: 16000,
            max_length: 200,
            beam_size: 6,
            length_norm_alpha: 0.6,
            early_stop_patience: 10,
            seed: 1111,
            tied_output: true,
            batch_tokens: 1000,
            valid_every: 500,
            max_epochs: 50,
            clip_norm: 5.0,
            ema: true,
            ema_decay: 0.9999,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config value for {key}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

macro_rules! config_fields {
    ($macro_cb:ident) => {
        $macro_cb! {
            enc_depth, dec_depth, heads, model_dim, ff_dim, dropout,
            label_smoothing, base_lr, lr_decay_start, max_length, beam_size,
            length_norm_alpha, early_stop_patience, seed, tied_output,
            batch_tokens, valid_every, max_epochs, clip_norm, ema, ema_decay,
            adam_beta1, adam_beta2, adam_eps
        }
    };
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return fail("heads must divide model_dim");
        }
        if self.enc_depth == 0 || self.dec_depth == 0 {
            return fail("encoder and decoder need at least one layer");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("dropout and label_smoothing must lie in [0, 1)");
        }
        if self.max_length < 2 {
            return fail("max_length must be at least 2");
        }
        if self.beam_size == 0 {
            return fail("beam_size must be at least 1");
        }
        if self.ff_dim == 0 || self.batch_tokens == 0 || self.max_epochs == 0 {
            return fail("ff_dim, batch_tokens, and max_epochs must be positive");
        }
        if self.valid_every == 0 || self.lr_decay_start == 0 {
            return fail("valid_every and lr_decay_start must be positive");
        }
        if !(self.base_lr > 0.0) || !(self.clip_norm > 0.0) {
            return fail("base_lr and clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail("ema_decay must lie in [0, 1)");
        }
        Ok(())
    }

    /// Serializes every field as one `key = value` line, in declaration
    /// order. The same text loads back via [`ModelConfig::from_flat`].
    pub fn to_flat(&self) -> String {
        macro_rules! emit {
            ($($field:ident),* $(,)?) => {{
                let mut out = String::new();
                $(
                    out.push_str(concat!(stringify!($field), " = "));
                    out.push_str(&self.$field.to_string());
                    out.push('\n');
                )*
                out
            }};
        }
        config_fields!(emit)
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped. An absent ff_dim follows model_dim at
    /// the usual 4x ratio.
    pub fn from_flat(text: &str) -> Result<ModelConfig, ConfigError> {
        let mut cfg = ModelConfig::default();
        let mut saw_ff = false;
        let mut saw_dim = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(idx + 1))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! assign {
                ($($field:ident),* $(,)?) => {
                    match key {
                        $(
                            stringify!($field) => {
                                cfg.$field = value.parse().map_err(|_| ConfigError::BadValue {
                                    key: key.to_string(),
                                    value: value.to_string(),
                                })?;
                            }
                        )*
                        other => return Err(ConfigError::UnknownKey(other.to_string())),
                    }
                };
            }
            config_fields!(assign);
            match key {
                "ff_dim" => saw_ff = true,
                "model_dim" => saw_dim = true,
                _ => {}
            }
        }
        if saw_dim && !saw_ff {
            cfg.ff_dim = 4 * cfg.model_dim;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.ff_dim, 4 * cfg.model_dim);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.seed, 1111);
        assert!(cfg.tied_output);
    }

    #[test]
    fn divisibility_is_enforced() {
        let cfg = ModelConfig { heads: 3, model_dim: 8, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flat_round_trip_preserves_every_field() {
        let cfg = ModelConfig {
            model_dim: 32,
            ff_dim: 48,
            dropout: 0.0,
            base_lr: 0.002,
            seed: 42,
            tied_output: false,
            ..ModelConfig::default()
        };
        let text = cfg.to_flat();
        assert_eq!(ModelConfig::from_flat(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_in_defaults() {
        let cfg = ModelConfig::from_flat("model_dim = 64\n# comment\n\nseed = 7\n").unwrap();
        assert_eq!(cfg.model_dim, 64);
        assert_eq!(cfg.ff_dim, 256);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.heads, 8);
        let cfg = ModelConfig::from_flat("model_dim = 64\nff_dim = 96\n").unwrap();
        assert_eq!(cfg.ff_dim, 96);
    }

    #[test]
    fn bad_config_lines_are_rejected() {
        assert_eq!(ModelConfig::from_flat("nonsense\n"), Err(ConfigError::BadLine(1)));
        assert_eq!(
            ModelConfig::from_flat("no_such_key = 3\n"),
            Err(ConfigError::UnknownKey("no_such_key".to_string()))
        );
        assert!(matches!(
            ModelConfig::from_flat("heads = many\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }
}
