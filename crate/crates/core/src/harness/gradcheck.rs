//! Gradient check of a whole toy model against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frontend::FeatureSequence;
use crate::models::{las_forward_backward, nt_forward_backward, ModelConfig, ModelMode, ModelParams, WindowSpec};
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport, Tensor2};
use crate::targets::BlockTargets;
use crate::tokenizer::{EOS, EPSILON};

#[derive(Debug, Clone)]
pub struct ToyGradCheck {
    pub mode: ModelMode,
    /// Used for both the encoder and the decoder.
    pub layers: usize,
    pub width: usize,
    pub vocab: usize,
    pub heads: usize,
    pub frames: usize,
    pub samples: usize,
    pub seed: u64,
}

impl ToyGradCheck {
    pub fn new(mode: ModelMode) -> Self {
        Self {
            mode,
            layers: 2,
            width: 16,
            vocab: 12,
            heads: 1,
            frames: 8,
            samples: 128,
            seed: 0,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            encoder_layers: self.layers,
            encoder_width: self.width,
            decoder_layers: self.layers,
            decoder_width: self.width,
            embed_dim: 8,
            attention_dim: 8,
            heads: self.heads,
            vocab: self.vocab,
        }
    }

    /// Random model, utterance and targets, then `samples` probed parameters
    /// at step 1e-4 and tolerance 1e-4.
    pub fn run(&self) -> Result<GradCheckReport> {
        let params = ModelParams::init(self.config(), self.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let x = FeatureSequence::new("toy", Tensor2::uniform(self.frames, 6, 1.0, &mut rng));
        let content = 4..self.vocab;
        let loss_of: Box<dyn Fn(&ModelParams, Option<&mut ModelParams>) -> Result<f64>> = match self.mode {
            ModelMode::Las => {
                let mut y: Vec<usize> = (0..3).map(|_| rng.gen_range(content.clone())).collect();
                y.push(EOS);
                Box::new(move |p, g| Ok(las_forward_backward(p, &x, &y, g)?.loss))
            }
            ModelMode::Nt => {
                let spec = WindowSpec::new(3, 1, 1)?;
                let per_block: Vec<Vec<usize>> = (0..self.frames.div_ceil(3))
                    .map(|_| {
                        let n = rng.gen_range(0..=2);
                        let mut b: Vec<usize> = (0..n).map(|_| rng.gen_range(content.clone())).collect();
                        b.push(EPSILON);
                        b
                    })
                    .collect();
                let bt = BlockTargets {
                    block_size: 3,
                    flattened: per_block.concat(),
                    per_block,
                };
                Box::new(move |p, g| Ok(nt_forward_backward(p, &x, &bt, &spec, g)?.loss))
            }
        };
        let mut grads = params.zeros_like();
        loss_of(&params, Some(&mut grads))?;
        let loss = |flat: &[f64]| {
            params
                .with_flat(flat)
                .and_then(|q| loss_of(&q, None))
                .unwrap_or(f64::NAN)
        };
        let opts = GradCheckOptions {
            samples: Some(self.samples),
            seed: self.seed,
            ..GradCheckOptions::default()
        };
        grad_check(loss, &params.flatten(), &grads.flatten(), |i| params.param_name(i), &opts)
    }
}
