use ntkit::decoder::{beam_search, enumeration_size, exhaustive_decode, Fusion, SearchOptions};
use ntkit::frontend::FeatureSequence;
use ntkit::harness::{CellKey, Lab, RecipeSettings};
use ntkit::lm::{train_ngram, FusionWeights};
use ntkit::models::{encode_utterance, nt_forward, ModelConfig, ModelParams, WindowSpec};
use ntkit::numerics::{log_softmax, lstm_step, multihead_attention, Tensor2};
use ntkit::targets::BlockTargets;
use ntkit::tokenizer::{TokenizerMode, EPSILON, SOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(t: usize, d: usize, seed: u64) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureSequence::new("x", Tensor2::uniform(t, d, 1.0, &mut rng))
}

/// Step-by-step loss built from the public cell, attention and softmax
/// primitives, slicing the encoder output by hand.
fn stepped_nt_loss(p: &ModelParams, x: &FeatureSequence, bt: &BlockTargets, spec: &WindowSpec) -> f64 {
    let enc = encode_utterance(p, x).unwrap();
    let c = &p.config;
    let mut states: Vec<_> = (0..c.decoder_layers)
        .map(|_| ntkit::numerics::LstmState::zeros(c.decoder_width))
        .collect();
    let mut prev = SOS;
    let mut nll = 0.0;
    for (b, block) in bt.per_block.iter().enumerate() {
        let start = (b + 1).saturating_sub(spec.lookback.max(1)) * spec.block_size;
        let end = ((b + 1) * spec.block_size + spec.lookahead).min(x.len());
        let rows: Vec<f64> = (start..end).flat_map(|t| enc.states.row(t).to_vec()).collect();
        let keys = Tensor2::from_vec(end - start, c.encoder_width, rows).unwrap();
        for &y in block {
            let query = states.last().unwrap().hidden.clone();
            let ctx = multihead_attention(&p.attention, &query, &keys, &keys).unwrap().context;
            let mut input: Vec<f64> = p.embedding.row(prev).to_vec();
            input.extend_from_slice(&ctx);
            for (layer, s) in p.decoder.iter().zip(states.iter_mut()) {
                let (h, next) = lstm_step(layer, &input, s).unwrap();
                *s = next;
                input = h;
            }
            input.extend_from_slice(&ctx);
            let logits: Vec<f64> = (0..c.vocab)
                .map(|v| p.output_bias[v] + p.output.row(v).iter().zip(&input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            nll -= log_softmax(&logits)[y];
            prev = y;
        }
    }
    nll / bt.flattened.len() as f64
}

#[test]
fn nt_loss_matches_stepped_oracle() {
    for heads in [1, 2] {
        let cfg = ModelConfig {
            encoder_layers: 2,
            encoder_width: 6,
            decoder_layers: 2,
            decoder_width: 5,
            embed_dim: 3,
            attention_dim: 4,
            heads,
            ..ModelConfig::new(4, 9)
        };
        let p = ModelParams::init(cfg, 17).unwrap();
        let x = features(8, 4, 17);
        let spec = WindowSpec::new(4, 2, 1).unwrap();
        let per_block = vec![vec![5, 6, EPSILON], vec![8, EPSILON]];
        let bt = BlockTargets {
            block_size: 4,
            flattened: per_block.concat(),
            per_block,
        };
        let got = nt_forward(&p, &x, &bt, &spec).unwrap().loss;
        let want = stepped_nt_loss(&p, &x, &bt, &spec);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

fn tiny(seed: u64, content: usize, t: usize) -> (ModelParams, FeatureSequence) {
    let cfg = ModelConfig {
        encoder_layers: 1,
        encoder_width: 6,
        decoder_layers: 1,
        decoder_width: 6,
        embed_dim: 3,
        attention_dim: 4,
        ..ModelConfig::new(3, 4 + content)
    };
    let mut p = ModelParams::init(cfg, seed).unwrap();
    p.scale(20.0);
    (p, features(t, 3, seed ^ 0x77))
}

#[test]
fn single_block_search_matches_exhaustive() {
    for seed in 0..50 {
        let t = 2 + (seed as usize % 5);
        let (p, x) = tiny(seed, 2, t);
        let spec = WindowSpec::new(t, 1, t).unwrap();
        let cap = 4;
        let opts = SearchOptions::new(enumeration_size(2, 1, cap) as usize, cap, 4..6);
        let got = beam_search(&p, &x, spec, &opts).unwrap();
        let want = exhaustive_decode(&p, &x, spec, &opts).unwrap();
        assert_eq!(got.best.tokens, want.tokens, "seed {seed}");
        assert!((got.best.score - want.score).abs() <= 1e-10);
    }
}

#[test]
fn zero_weight_fusion_equals_no_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seqs: Vec<Vec<usize>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(4..7)).collect()).collect();
    let lm = train_ngram(&seqs, 3, 7, SOS).unwrap();
    for seed in 0..50 {
        let (p, x) = tiny(seed, 3, 3 + (seed as usize % 10));
        let spec = WindowSpec::new(3, 2, 1).unwrap();
        let plain = SearchOptions::new(4, 2, 4..7);
        let fused = SearchOptions::new(4, 2, 4..7).with_fusion(Fusion {
            lm: Some(&lm),
            weights: FusionWeights::new(0.0, 0.0, 0.5).unwrap(),
        });
        let a = beam_search(&p, &x, spec, &plain).unwrap();
        let b = beam_search(&p, &x, spec, &fused).unwrap();
        assert_eq!(a.best.tokens, b.best.tokens, "seed {seed}");
        assert_eq!(a.best.score.to_bits(), b.best.score.to_bits());
    }
}

#[test]
fn las_reaches_low_wer_on_the_synthetic_task() {
    let settings = RecipeSettings {
        seeds: vec![1],
        ..RecipeSettings::default()
    };
    let steps = settings.las_steps;
    let mut lab = Lab::new(settings).unwrap();
    let wer = lab.cell(CellKey::las(TokenizerMode::Grapheme, 1, steps, 1)).unwrap().wer;
    assert!(wer < 5.0, "LAS WER {wer:.2}%");
}
