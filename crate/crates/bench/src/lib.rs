//! Fixtures shared by the benchmarks.

use ntkit::frontend::{synth_corpus, Lexicon, SynthCorpusConfig, Utterance};
use ntkit::harness::{observed_block_max, prepare_examples, Example};
use ntkit::models::{ModelConfig, ModelMode, ModelParams, WindowSpec};
use ntkit::targets::default_cap;
use ntkit::tokenizer::SubwordInventory;

pub struct Fixture {
    pub params: ModelParams,
    pub utterance: Utterance,
    pub inventory: SubwordInventory,
    pub spec: WindowSpec,
    pub cap: usize,
    pub nt: Example,
    pub las: Example,
}

/// A 2x`width` model and one synthetic utterance of three words.
pub fn fixture(width: usize, heads: usize) -> Fixture {
    let lexicon = Lexicon::random(30, 10, 7);
    let corpus = synth_corpus(
        &lexicon,
        &SynthCorpusConfig {
            utterances: 20,
            min_words: 3,
            max_words: 3,
            ..SynthCorpusConfig::default()
        },
    )
    .expect("corpus");
    let inventory = SubwordInventory::graphemes(corpus.iter().map(|u| u.transcript.as_str()));
    let spec = WindowSpec::new(5, 20, 5).expect("window");
    let cap = default_cap(observed_block_max(&corpus, &inventory, 5).expect("alignments"));
    let one = &corpus[..1];
    let nt = prepare_examples(one, &inventory, ModelMode::Nt, 5, cap).expect("targets").remove(0);
    let las = prepare_examples(one, &inventory, ModelMode::Las, 5, cap).expect("targets").remove(0);
    let cfg = ModelConfig {
        encoder_width: width,
        decoder_width: width,
        attention_dim: width,
        embed_dim: 16,
        heads,
        ..ModelConfig::new(corpus[0].features.dim(), inventory.len())
    };
    Fixture {
        params: ModelParams::init(cfg, 1).expect("params"),
        utterance: corpus[0].clone(),
        inventory,
        spec,
        cap,
        nt,
        las,
    }
}
