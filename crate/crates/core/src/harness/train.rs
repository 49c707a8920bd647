//! Mini-batch Adam training with periodic evaluation and best-checkpoint
//! retention.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FeatureSequence, Utterance};
use crate::models::{las_forward_backward, nt_forward_backward, ModelMode, ModelParams, WindowSpec};
use crate::numerics::{adam_update, AdamState};
use crate::targets::{build_block_targets, BlockTargets};
use crate::tokenizer::{SubwordInventory, EOS};

/// One utterance with its training targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub features: FeatureSequence,
    /// LAS: transcript units plus end-of-sentence. NT: flattened block targets.
    pub targets: Vec<usize>,
    pub blocks: Option<BlockTargets>,
}

/// Largest number of labels any word-final block receives at `block_size`.
pub fn observed_block_max(utterances: &[Utterance], inventory: &SubwordInventory, block_size: usize) -> Result<usize> {
    let mut max = 0;
    for u in utterances {
        let words = inventory.encode_words(&u.transcript);
        let bt = build_block_targets(u.id(), &u.alignment, &words, u.features.len(), block_size, usize::MAX)?;
        max = max.max(bt.max_block_labels());
    }
    Ok(max)
}

pub fn prepare_examples(
    utterances: &[Utterance],
    inventory: &SubwordInventory,
    mode: ModelMode,
    block_size: usize,
    cap: usize,
) -> Result<Vec<Example>> {
    utterances
        .iter()
        .map(|u| {
            let (targets, blocks) = match mode {
                ModelMode::Las => {
                    let mut y = inventory.encode(&u.transcript);
                    y.push(EOS);
                    (y, None)
                }
                ModelMode::Nt => {
                    let words = inventory.encode_words(&u.transcript);
                    let bt = build_block_targets(u.id(), &u.alignment, &words, u.features.len(), block_size, cap)?;
                    (bt.flattened.clone(), Some(bt))
                }
            };
            Ok(Example {
                id: u.id().to_string(),
                features: u.features.clone(),
                targets,
                blocks,
            })
        })
        .collect()
}

/// Mean per-token loss of one example; gradients are added into `grads`.
pub fn example_loss(
    params: &ModelParams,
    ex: &Example,
    spec: &WindowSpec,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    let out = match &ex.blocks {
        Some(bt) => nt_forward_backward(params, &ex.features, bt, spec, grads)?,
        None => las_forward_backward(params, &ex.features, &ex.targets, grads)?,
    };
    Ok(out.loss)
}

/// Mean example loss over a set, no gradients.
pub fn dataset_loss(params: &ModelParams, examples: &[Example], spec: &WindowSpec) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in examples {
        total += example_loss(params, ex, spec, None)?;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub spec: WindowSpec,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_wer: Option<f64>,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    /// Same record with the wall clock zeroed, for reproducibility checks.
    pub fn without_time(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest eval loss (last ones if there is no eval set).
    pub best: ModelParams,
    pub best_step: usize,
    pub best_eval_loss: Option<f64>,
    pub metrics: Vec<MetricsRecord>,
}

fn global_norm(flat: &[f64]) -> f64 {
    flat.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Trains `init` on `train`, evaluating on `eval` every `eval_every` steps
/// and at the end. Fully determined by the inputs and `opts.seed`.
pub fn train_model(
    init: ModelParams,
    train: &[Example],
    eval: &[Example],
    opts: &TrainOptions,
    mut sink: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    init.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut params = init;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len(), opts.learning_rate);
    let mut metrics = Vec::new();
    let mut best = (params.clone(), 0usize, None::<f64>);
    let mut window_loss = 0.0;
    let mut window_batches = 0usize;

    for step in 1..=opts.steps {
        let mut grads = params.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..opts.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &train[order[cursor]];
            cursor += 1;
            batch_loss += example_loss(&params, ex, &opts.spec, Some(&mut grads))?;
        }
        batch_loss /= opts.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                parameter: format!("training loss at step {step}"),
            });
        }
        let mut g = grads.flatten();
        let mut scale = 1.0 / opts.batch_size as f64;
        let norm = global_norm(&g) * scale;
        if norm > opts.clip_norm {
            scale *= opts.clip_norm / norm;
        }
        g.iter_mut().for_each(|v| *v *= scale);
        adam_update(&mut flat, &g, &mut adam)?;
        params.load_flat(&flat)?;

        window_loss += batch_loss;
        window_batches += 1;
        let is_eval = step == opts.steps || (opts.eval_every > 0 && step % opts.eval_every == 0);
        if is_eval {
            let eval_loss = if eval.is_empty() {
                None
            } else {
                Some(dataset_loss(&params, eval, &opts.spec)?)
            };
            let rec = MetricsRecord {
                step,
                train_loss: window_loss / window_batches as f64,
                eval_loss,
                eval_wer: None,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            window_loss = 0.0;
            window_batches = 0;
            let improved = match (eval_loss, best.2) {
                (None, _) => true,
                (Some(l), None) => l.is_finite(),
                (Some(l), Some(b)) => l < b,
            };
            if improved {
                best = (params.clone(), step, eval_loss);
            }
            sink(&rec);
            metrics.push(rec);
        }
    }
    if opts.steps == 0 {
        best = (params, 0, None);
    }
    Ok(TrainOutcome {
        best: best.0,
        best_step: best.1,
        best_eval_loss: best.2,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{synth_corpus, Lexicon, SynthCorpusConfig};
    use crate::models::ModelConfig;

    fn setup(mode: ModelMode) -> (ModelParams, Vec<Example>, WindowSpec) {
        let lex = Lexicon::random(6, 5, 3);
        let corpus = synth_corpus(
            &lex,
            &SynthCorpusConfig {
                utterances: 6,
                ..Default::default()
            },
        )
        .unwrap();
        let inv = SubwordInventory::graphemes(corpus.iter().map(|u| u.transcript.as_str()));
        let spec = WindowSpec::new(4, 2, 1).unwrap();
        let ex = prepare_examples(&corpus, &inv, mode, 4, 64).unwrap();
        let cfg = ModelConfig {
            encoder_layers: 1,
            encoder_width: 8,
            decoder_layers: 1,
            decoder_width: 8,
            embed_dim: 4,
            attention_dim: 6,
            ..ModelConfig::new(24, inv.len())
        };
        (ModelParams::init(cfg, 9).unwrap(), ex, spec)
    }

    fn opts(spec: WindowSpec) -> TrainOptions {
        TrainOptions {
            steps: 30,
            batch_size: 3,
            learning_rate: 0.02,
            clip_norm: 5.0,
            eval_every: 10,
            seed: 4,
            spec,
        }
    }

    #[test]
    fn loss_decreases_on_tiny_set() {
        for mode in [ModelMode::Las, ModelMode::Nt] {
            let (p, ex, spec) = setup(mode);
            let before = dataset_loss(&p, &ex, &spec).unwrap();
            let out = train_model(p, &ex, &ex, &opts(spec), |_| {}).unwrap();
            let after = dataset_loss(&out.best, &ex, &spec).unwrap();
            assert!(after < before * 0.8, "{mode}: {before} -> {after}");
            assert_eq!(out.metrics.len(), 3);
            assert_eq!(out.best_eval_loss, Some(after));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (p, ex, spec) = setup(ModelMode::Nt);
        let a = train_model(p.clone(), &ex, &ex, &opts(spec), |_| {}).unwrap();
        let b = train_model(p, &ex, &ex, &opts(spec), |_| {}).unwrap();
        assert_eq!(a.best.flatten(), b.best.flatten());
        let strip = |m: &[MetricsRecord]| m.iter().map(MetricsRecord::without_time).collect::<Vec<_>>();
        assert_eq!(strip(&a.metrics), strip(&b.metrics));
    }

    #[test]
    fn metrics_serialize_as_json_lines() {
        let r = MetricsRecord {
            step: 3,
            train_loss: 1.5,
            eval_loss: None,
            eval_wer: Some(0.25),
            wall_ms: 12,
        };
        let line = r.to_json_line();
        assert!(!line.contains('\n'));
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
