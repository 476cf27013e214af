//! Training configuration and its line-oriented `key=value` text form.
//!
//! Precedence when assembling a configuration is flags over file over
//! defaults: start from a default, [`TrainConfig::apply_text`] the file,
//! then [`TrainConfig::set`] each flag.

use std::fmt;

use crate::encoder::{EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind};
use crate::objectives::{LossConfig, LossKind, Reduction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    UnsupCse,
    SupCse,
    None,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::UnsupCse => "unsup_cse",
            Objective::SupCse => "sup_cse",
            Objective::None => "none",
        }
    }

    /// Accepts `_` or `-` as separator.
    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "unsup_cse" => Ok(Objective::UnsupCse),
            "sup_cse" => Ok(Objective::SupCse),
            "none" => Ok(Objective::None),
            _ => Err(Error::InvalidConfig(format!("unknown objective `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Truncation length of training and evaluation inputs.
    pub max_length: usize,
    /// Position table size of a newly built encoder; at least `max_length`.
    pub max_positions: usize,
    pub loss: LossConfig,
    pub head: HeadKind,
    pub objective: Objective,
    pub seed: u64,
    pub dropout_p: f64,
    /// Weight of the masked-token loss added during pretraining.
    pub mlm_weight: f64,
    /// Fraction of tokens masked for the pretraining masked-token loss.
    pub mask_rate: f64,
    /// Train only the head during fine-tuning.
    pub freeze_encoder: bool,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub pooling: Pooling,
    /// Minimum corpus frequency for a word to enter the vocabulary.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::finetune()
    }
}

impl TrainConfig {
    /// Fine-tuning defaults.
    pub fn finetune() -> Self {
        Self {
            batch_size: 32,
            epochs: 4,
            learning_rate: 1e-5,
            weight_decay: 0.01,
            max_length: 64,
            max_positions: 256,
            loss: LossConfig::default(),
            head: HeadKind::Linear,
            objective: Objective::UnsupCse,
            seed: 42,
            dropout_p: 0.1,
            mlm_weight: 1.0,
            mask_rate: 0.15,
            freeze_encoder: false,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            pooling: Pooling::Cls,
            min_count: 1,
        }
    }

    /// Pretraining defaults: as fine-tuning, with learning rate 1e-3.
    pub fn pretrain() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.mlm_weight >= 0.0) {
            return bad(format!("mlm_weight {} must be >= 0", self.mlm_weight));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate {} outside [0, 1]", self.mask_rate));
        }
        self.loss.validate()?;
        self.encoder_config(crate::data::NUM_RESERVED + 1).validate()?;
        self.head_config().validate()
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_length: self.max_positions.max(self.max_length),
            dropout_p: self.dropout_p,
            pooling: self.pooling,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            dropout_p: self.dropout_p,
            ..HeadConfig::for_encoder(self.head, self.d_model)
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{key}`")))
        }
        match key.trim() {
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "max_length" => self.max_length = num(key, value)?,
            "max_positions" => self.max_positions = num(key, value)?,
            "loss" => self.loss.kind = LossKind::parse(value)?,
            "gamma" => self.loss.gamma = num(key, value)?,
            "reduction" => self.loss.reduction = Reduction::parse(value)?,
            "temperature" => self.loss.temperature = num(key, value)?,
            "head" => self.head = HeadKind::parse(value)?,
            "objective" => self.objective = Objective::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "dropout_p" => self.dropout_p = num(key, value)?,
            "mlm_weight" => self.mlm_weight = num(key, value)?,
            "mask_rate" => self.mask_rate = num(key, value)?,
            "freeze_encoder" => self.freeze_encoder = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_layers" => self.n_layers = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "pooling" => self.pooling = Pooling::parse(value)?,
            "min_count" => self.min_count = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Keys in sorted order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut pairs = vec![
            ("batch_size", self.batch_size.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("d_model", self.d_model.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("epochs", self.epochs.to_string()),
            ("freeze_encoder", self.freeze_encoder.to_string()),
            ("gamma", self.loss.gamma.to_string()),
            ("head", self.head.name().to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("loss", self.loss.kind.name().to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("max_length", self.max_length.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("min_count", self.min_count.to_string()),
            ("mlm_weight", self.mlm_weight.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("objective", self.objective.name().to_string()),
            ("pooling", self.pooling.name().to_string()),
            ("reduction", self.loss.reduction.name().to_string()),
            ("seed", self.seed.to_string()),
            ("temperature", self.loss.temperature.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        pairs.sort();
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(base: TrainConfig, text: &str) -> Result<Self> {
        let mut c = base;
        c.apply_text(text)?;
        Ok(c)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
