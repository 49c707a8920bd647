//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors. Every
//! key has a default, so an empty file is a valid configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{read_input_string, Error, Result};
use crate::lm::FusionWeights;
use crate::models::{ModelConfig, ModelMode, WindowSpec};
use crate::tokenizer::TokenizerMode;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: ModelMode,
    pub block_size: usize,
    pub lookback: usize,
    pub lookahead: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub tokenizer: TokenizerMode,
    pub wordpiece_size: usize,
    /// Labels allowed per block; 0 derives it from the training targets.
    pub max_per_block: usize,
    pub beam: usize,
    pub lm_weight: f64,
    pub coverage_weight: f64,
    pub coverage_threshold: f64,
    /// 0 disables the external language model.
    pub lm_order: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub train_corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Nt,
            block_size: 5,
            lookback: 20,
            lookahead: 5,
            heads: 1,
            encoder_layers: 2,
            encoder_width: 32,
            decoder_layers: 2,
            decoder_width: 32,
            embed_dim: 16,
            attention_dim: 32,
            tokenizer: TokenizerMode::Grapheme,
            wordpiece_size: 64,
            max_per_block: 0,
            beam: 8,
            lm_weight: 0.0,
            coverage_weight: 0.0,
            coverage_threshold: 0.5,
            lm_order: 0,
            steps: 600,
            batch_size: 8,
            learning_rate: 0.005,
            clip_norm: 5.0,
            eval_every: 100,
            seed: 1,
            train_corpus: None,
            eval_corpus: None,
            inventory: None,
            lm: None,
            init_checkpoint: None,
            output_dir: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "block_size",
    "lookback",
    "lookahead",
    "heads",
    "encoder_layers",
    "encoder_width",
    "decoder_layers",
    "decoder_width",
    "embed_dim",
    "attention_dim",
    "tokenizer",
    "wordpiece_size",
    "max_per_block",
    "beam",
    "lm_weight",
    "coverage_weight",
    "coverage_threshold",
    "lm_order",
    "steps",
    "batch_size",
    "learning_rate",
    "clip_norm",
    "eval_every",
    "seed",
    "train_corpus",
    "eval_corpus",
    "inventory",
    "lm",
    "init_checkpoint",
    "output_dir",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => self.mode = v.parse()?,
            "block_size" => self.block_size = num(key, v)?,
            "lookback" => self.lookback = num(key, v)?,
            "lookahead" => self.lookahead = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "encoder_layers" => self.encoder_layers = num(key, v)?,
            "encoder_width" => self.encoder_width = num(key, v)?,
            "decoder_layers" => self.decoder_layers = num(key, v)?,
            "decoder_width" => self.decoder_width = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "attention_dim" => self.attention_dim = num(key, v)?,
            "tokenizer" => self.tokenizer = v.parse()?,
            "wordpiece_size" => self.wordpiece_size = num(key, v)?,
            "max_per_block" => self.max_per_block = num(key, v)?,
            "beam" => self.beam = num(key, v)?,
            "lm_weight" => self.lm_weight = num(key, v)?,
            "coverage_weight" => self.coverage_weight = num(key, v)?,
            "coverage_threshold" => self.coverage_threshold = num(key, v)?,
            "lm_order" => self.lm_order = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "clip_norm" => self.clip_norm = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "train_corpus" => self.train_corpus = path(v),
            "eval_corpus" => self.eval_corpus = path(v),
            "inventory" => self.inventory = path(v),
            "lm" => self.lm = path(v),
            "init_checkpoint" => self.init_checkpoint = path(v),
            "output_dir" => self.output_dir = path(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Value of `key` as written by [`to_text`](Self::to_text).
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "mode" => self.mode.to_string(),
            "block_size" => self.block_size.to_string(),
            "lookback" => self.lookback.to_string(),
            "lookahead" => self.lookahead.to_string(),
            "heads" => self.heads.to_string(),
            "encoder_layers" => self.encoder_layers.to_string(),
            "encoder_width" => self.encoder_width.to_string(),
            "decoder_layers" => self.decoder_layers.to_string(),
            "decoder_width" => self.decoder_width.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "attention_dim" => self.attention_dim.to_string(),
            "tokenizer" => self.tokenizer.to_string(),
            "wordpiece_size" => self.wordpiece_size.to_string(),
            "max_per_block" => self.max_per_block.to_string(),
            "beam" => self.beam.to_string(),
            "lm_weight" => self.lm_weight.to_string(),
            "coverage_weight" => self.coverage_weight.to_string(),
            "coverage_threshold" => self.coverage_threshold.to_string(),
            "lm_order" => self.lm_order.to_string(),
            "steps" => self.steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "seed" => self.seed.to_string(),
            "train_corpus" => show(&self.train_corpus),
            "eval_corpus" => show(&self.eval_corpus),
            "inventory" => show(&self.inventory),
            "lm" => show(&self.lm),
            "init_checkpoint" => show(&self.init_checkpoint),
            "output_dir" => show(&self.output_dir),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_input_string(path.as_ref())?)
    }

    /// Every key in canonical order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    /// Short digest of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.window()?;
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.encoder_width % self.heads.max(1) != 0 || self.heads == 0 {
            return Err(Error::Config(format!(
                "encoder_width {} must be a multiple of heads {}",
                self.encoder_width, self.heads
            )));
        }
        FusionWeights::new(self.lm_weight, self.coverage_weight, self.coverage_threshold)?;
        if self.lm_weight > 0.0 && self.lm_order == 0 && self.lm.is_none() {
            return Err(Error::Config("lm_weight set but no language model (lm_order or lm)".into()));
        }
        Ok(())
    }

    /// Fails if any referenced file is missing.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("train_corpus", &self.train_corpus),
            ("eval_corpus", &self.eval_corpus),
            ("inventory", &self.inventory),
            ("lm", &self.lm),
            ("init_checkpoint", &self.init_checkpoint),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn window(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.block_size, self.lookback, self.lookahead)
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        FusionWeights {
            lambda: self.lm_weight,
            eta: self.coverage_weight,
            beta: self.coverage_threshold,
        }
    }

    pub fn model_config(&self, feature_dim: usize, vocab: usize) -> ModelConfig {
        ModelConfig {
            feature_dim,
            encoder_layers: self.encoder_layers,
            encoder_width: self.encoder_width,
            decoder_layers: self.decoder_layers,
            decoder_width: self.decoder_width,
            embed_dim: self.embed_dim,
            attention_dim: self.attention_dim,
            heads: self.heads,
            vocab,
        }
    }
}
