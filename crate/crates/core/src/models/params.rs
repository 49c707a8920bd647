use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdditiveAttention, LstmLayer, MultiHeadAttention, Tensor2};

const INIT_SCALE: f64 = 0.05;

/// Architecture hyperparameters shared by the full-sequence and streaming
/// models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub heads: usize,
    /// Output classes, epsilon included.
    pub vocab: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 2x64 encoder, 2x64 decoder, one head.
    pub fn new(feature_dim: usize, vocab: usize) -> Self {
        Self {
            feature_dim,
            encoder_layers: 2,
            encoder_width: 64,
            decoder_layers: 2,
            decoder_width: 64,
            embed_dim: 32,
            attention_dim: 64,
            heads: 1,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("embed_dim", self.embed_dim),
            ("attention_dim", self.attention_dim),
            ("heads", self.heads),
            ("vocab", self.vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.encoder_width % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by {} attention heads",
                self.encoder_width, self.heads
            )));
        }
        Ok(())
    }

    pub fn to_header(&self) -> String {
        format!(
            "feat={} enc_layers={} enc_width={} dec_layers={} dec_width={} embed={} att={} heads={} vocab={}",
            self.feature_dim,
            self.encoder_layers,
            self.encoder_width,
            self.decoder_layers,
            self.decoder_width,
            self.embed_dim,
            self.attention_dim,
            self.heads,
            self.vocab
        )
    }

    pub fn from_header(line: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(0, 0);
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config field `{field}`")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value in `{field}`")))?;
            let slot = match k {
                "feat" => &mut cfg.feature_dim,
                "enc_layers" => &mut cfg.encoder_layers,
                "enc_width" => &mut cfg.encoder_width,
                "dec_layers" => &mut cfg.decoder_layers,
                "dec_width" => &mut cfg.decoder_width,
                "embed" => &mut cfg.embed_dim,
                "att" => &mut cfg.attention_dim,
                "heads" => &mut cfg.heads,
                "vocab" => &mut cfg.vocab,
                _ => return Err(Error::Checkpoint(format!("unknown config key `{k}`"))),
            };
            *slot = v;
            seen += 1;
        }
        if seen != 9 {
            return Err(Error::Checkpoint(format!("incomplete model config `{line}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which training criterion produced a parameter record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelMode {
    Las,
    Nt,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::Las => "las",
            ModelMode::Nt => "nt",
        })
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "las" => Ok(ModelMode::Las),
            "nt" => Ok(ModelMode::Nt),
            other => Err(Error::Config(format!("unknown model mode `{other}`"))),
        }
    }
}

/// Listener, attender and speller weights. The output projection always has
/// a row for every inventory unit, epsilon included, so the same record
/// serves both model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<LstmLayer>,
    pub attention: MultiHeadAttention,
    /// `V x E`
    pub embedding: Tensor2,
    pub decoder: Vec<LstmLayer>,
    /// `V x (decoder_width + encoder_width)`
    pub output: Tensor2,
    pub output_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let head_key = c.encoder_width / c.heads;
        Ok(Self {
            config,
            encoder: (0..c.encoder_layers)
                .map(|l| {
                    let input = if l == 0 { c.feature_dim } else { c.encoder_width };
                    LstmLayer::zeros(input, c.encoder_width)
                })
                .collect(),
            attention: MultiHeadAttention {
                heads: (0..c.heads)
                    .map(|_| AdditiveAttention::zeros(c.decoder_width, head_key, c.attention_dim))
                    .collect(),
            },
            embedding: Tensor2::zeros(c.vocab, c.embed_dim),
            decoder: (0..c.decoder_layers)
                .map(|l| {
                    let input = if l == 0 {
                        c.embed_dim + c.encoder_width
                    } else {
                        c.decoder_width
                    };
                    LstmLayer::zeros(input, c.decoder_width)
                })
                .collect(),
            output: Tensor2::zeros(c.vocab, c.decoder_width + c.encoder_width),
            output_bias: vec![0.0; c.vocab],
        })
    }

    /// Seeded initialization: weights uniform in `[-0.05, 0.05]`, LSTM
    /// forget-gate biases 1, other biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = (0..c.encoder_layers)
            .map(|l| {
                let input = if l == 0 { c.feature_dim } else { c.encoder_width };
                LstmLayer::init(input, c.encoder_width, &mut rng)
            })
            .collect();
        let attention = MultiHeadAttention::init(
            c.decoder_width,
            c.encoder_width,
            c.attention_dim,
            c.heads,
            &mut rng,
        )?;
        let embedding = Tensor2::uniform(c.vocab, c.embed_dim, INIT_SCALE, &mut rng);
        let decoder = (0..c.decoder_layers)
            .map(|l| {
                let input = if l == 0 {
                    c.embed_dim + c.encoder_width
                } else {
                    c.decoder_width
                };
                LstmLayer::init(input, c.decoder_width, &mut rng)
            })
            .collect();
        let output = Tensor2::uniform(c.vocab, c.decoder_width + c.encoder_width, INIT_SCALE, &mut rng);
        Ok(Self {
            config,
            encoder,
            attention,
            embedding,
            decoder,
            output,
            output_bias: vec![0.0; c.vocab],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// Visits every parameter array in the fixed serialization order.
    pub fn visit(&self, mut f: impl FnMut(&str, &[f64])) {
        for (l, layer) in self.encoder.iter().enumerate() {
            f(&format!("encoder.{l}.w_input"), layer.w_input.data());
            f(&format!("encoder.{l}.w_hidden"), layer.w_hidden.data());
            f(&format!("encoder.{l}.bias"), &layer.bias);
        }
        for (h, head) in self.attention.heads.iter().enumerate() {
            f(&format!("attention.{h}.w_query"), head.w_query.data());
            f(&format!("attention.{h}.w_key"), head.w_key.data());
            f(&format!("attention.{h}.v"), &head.v);
        }
        f("embedding", self.embedding.data());
        for (l, layer) in self.decoder.iter().enumerate() {
            f(&format!("decoder.{l}.w_input"), layer.w_input.data());
            f(&format!("decoder.{l}.w_hidden"), layer.w_hidden.data());
            f(&format!("decoder.{l}.bias"), &layer.bias);
        }
        f("output.weight", self.output.data());
        f("output.bias", &self.output_bias);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            f(&format!("encoder.{l}.w_input"), layer.w_input.data_mut());
            f(&format!("encoder.{l}.w_hidden"), layer.w_hidden.data_mut());
            f(&format!("encoder.{l}.bias"), &mut layer.bias);
        }
        for (h, head) in self.attention.heads.iter_mut().enumerate() {
            f(&format!("attention.{h}.w_query"), head.w_query.data_mut());
            f(&format!("attention.{h}.w_key"), head.w_key.data_mut());
            f(&format!("attention.{h}.v"), &mut head.v);
        }
        f("embedding", self.embedding.data_mut());
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            f(&format!("decoder.{l}.w_input"), layer.w_input.data_mut());
            f(&format!("decoder.{l}.w_hidden"), layer.w_hidden.data_mut());
            f(&format!("decoder.{l}.bias"), &mut layer.bias);
        }
        f("output.weight", self.output.data_mut());
        f("output.bias", &mut self.output_bias);
    }

    /// `(name, length)` of every parameter array in order.
    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(|n, d| out.push((n.to_string(), d.len())));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, d| n += d.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(|_, d| out.extend_from_slice(d));
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("flat parameter vector", n, flat.len()));
        }
        let mut off = 0;
        self.visit_mut(|_, d| {
            d.copy_from_slice(&flat[off..off + d.len()]);
            off += d.len();
        });
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.load_flat(flat)?;
        Ok(p)
    }

    /// Human-readable label of a flat parameter index.
    pub fn param_name(&self, index: usize) -> String {
        let mut off = 0;
        let mut name = None;
        self.visit(|n, d| {
            if name.is_none() && index < off + d.len() {
                name = Some(format!("{n}[{}]", index - off));
            }
            off += d.len();
        });
        name.unwrap_or_else(|| format!("<out of range {index}>"))
    }

    /// Checks every array against the shapes implied by `config`.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(self.config)?;
        let want = expected.layout();
        let got = self.layout();
        if want.len() != got.len() {
            return Err(Error::shape("parameter arrays", want.len(), got.len()));
        }
        for ((wn, wl), (gn, gl)) in want.iter().zip(&got) {
            if wn != gn || wl != gl {
                return Err(Error::shape(gn.clone(), format!("{wn} with {wl} values"), gl));
            }
        }
        for (l, layer) in self.encoder.iter().chain(&self.decoder).enumerate() {
            layer.validate(&format!("lstm {l}"))?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn scale(&mut self, factor: f64) {
        self.visit_mut(|_, d| d.iter_mut().for_each(|v| *v *= factor));
    }

    /// `self += other`, array by array.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut(|_, d| {
            for (a, b) in d.iter_mut().zip(&flat[off..]) {
                *a += b;
            }
            off += d.len();
        });
    }
}
