//! Feature sequences, frame stacking, the synthetic utterance generator, and
//! the JSON-lines corpus format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const RAW_SHIFT_MS: u32 = 10;
pub const FRAME_SHIFT_MS: u32 = 30;
/// Raw frames folded into each output frame.
pub const STACK: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrames {
    pub frames: Tensor2,
    pub frame_shift_ms: u32,
}

impl RawFrames {
    pub fn new(frames: Tensor2) -> Self {
        Self {
            frames,
            frame_shift_ms: RAW_SHIFT_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor2,
    pub frame_shift_ms: u32,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Tensor2) -> Self {
        Self {
            frames,
            frame_shift_ms: FRAME_SHIFT_MS,
            utterance_id: utterance_id.into(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordAlignment {
    pub entries: Vec<AlignedWord>,
}

impl WordAlignment {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.word.as_str())
    }

    /// Checks ordering, span sanity, and that every span lies inside `frames`.
    pub fn validate(&self, frames: usize, utterance: &str) -> Result<()> {
        let fail = |message: String| Error::Alignment {
            utterance: utterance.to_string(),
            message,
        };
        let mut prev_end: Option<usize> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.end_frame < e.start_frame {
                return Err(fail(format!(
                    "word {i} `{}` ends ({}) before it starts ({})",
                    e.word, e.end_frame, e.start_frame
                )));
            }
            if let Some(p) = prev_end {
                if e.start_frame <= p {
                    return Err(fail(format!(
                        "word {i} `{}` starts at {} but the previous word ends at {p}",
                        e.word, e.start_frame
                    )));
                }
            }
            if e.end_frame >= frames {
                return Err(fail(format!(
                    "word {i} `{}` ends at frame {} but the utterance has {frames} frames",
                    e.word, e.end_frame
                )));
            }
            prev_end = Some(e.end_frame);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureSequence,
    pub alignment: WordAlignment,
    pub transcript: String,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.features.utterance_id
    }
}

/// Stacks each kept raw frame with its two left neighbours and keeps every
/// third one: output frame `t` is `[raw[3t-2], raw[3t-1], raw[3t]]`, with
/// negative indices clamped to the first frame.
pub fn stack_and_downsample(raw: &RawFrames, utterance_id: &str) -> Result<FeatureSequence> {
    let n = raw.frames.rows();
    if n == 0 {
        return Err(Error::EmptyUtterance(Some(utterance_id.to_string())));
    }
    let d = raw.frames.cols();
    let out_len = n.div_ceil(STACK);
    let mut data = Vec::with_capacity(out_len * d * STACK);
    for t in 0..out_len {
        let anchor = STACK * t;
        for back in (0..STACK).rev() {
            let src = anchor.saturating_sub(back);
            data.extend_from_slice(raw.frames.row(src));
        }
    }
    Ok(FeatureSequence::new(
        utterance_id,
        Tensor2::from_vec(out_len, d * STACK, data)?,
    ))
}

/// Word list plus the rendering parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub words: Vec<String>,
    /// Raw (10 ms) feature dimension; stacked features are three times wider.
    pub raw_dim: usize,
    /// 30 ms frames per character.
    pub frames_per_char: usize,
    /// Silent 30 ms frames between consecutive words.
    pub gap_frames: usize,
    /// Silent 30 ms frames after the last word.
    pub tail_frames: usize,
    /// Seed of the per-character embedding patterns.
    pub pattern_seed: u64,
}

impl Lexicon {
    pub fn new(words: Vec<String>) -> Self {
        Self {
            words,
            raw_dim: 8,
            frames_per_char: 2,
            gap_frames: 1,
            tail_frames: 2,
            pattern_seed: 0x5eed,
        }
    }

    /// `count` distinct words of 2–5 letters over the first `alphabet`
    /// lowercase letters.
    pub fn random(count: usize, alphabet: usize, seed: u64) -> Self {
        let letters: Vec<char> = ('a'..='z').take(alphabet.clamp(1, 26)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = Vec::with_capacity(count);
        let mut attempts = 0;
        while words.len() < count && attempts < count * 1000 {
            attempts += 1;
            let len = rng.gen_range(2..=5);
            let w: String = (0..len).map(|_| *letters.choose(&mut rng).unwrap()).collect();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        Self::new(words)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.iter().any(|w| w == word)
    }

    /// Deterministic embedding of one character, independent of any utterance.
    pub fn char_pattern(&self, c: char) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.pattern_seed ^ ((c as u64) << 20));
        (0..self.raw_dim)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.0))
            .collect()
    }
}

/// Renders `words` into stacked features plus exact word spans.
///
/// Each character occupies `frames_per_char` output frames (three raw frames
/// each) of its pattern; words are separated by `gap_frames` of silence, the
/// utterance ends with `tail_frames` of silence, and Gaussian noise of
/// standard deviation `noise_level` is added to every raw value. Pure in `(words, lexicon, noise_level, seed)`.
pub fn synth_utterance(
    id: &str,
    words: &[&str],
    lexicon: &Lexicon,
    noise_level: f64,
    seed: u64,
) -> Result<(FeatureSequence, WordAlignment)> {
    if words.is_empty() {
        return Err(Error::EmptyUtterance(Some(id.to_string())));
    }
    for w in words {
        if !lexicon.contains(w) {
            return Err(Error::UnknownWord(w.to_string()));
        }
    }
    let raw_per_char = lexicon.frames_per_char * STACK;
    let raw_gap = lexicon.gap_frames * STACK;
    let mut raw = Tensor2::zeros(0, lexicon.raw_dim);
    let mut alignment = WordAlignment::default();
    let mut frame = 0;
    let silence = vec![0.0; lexicon.raw_dim];
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            for _ in 0..raw_gap {
                raw.push_row(&silence)?;
            }
            frame += lexicon.gap_frames;
        }
        let chars = w.chars().count();
        for c in w.chars() {
            let pattern = lexicon.char_pattern(c);
            for _ in 0..raw_per_char {
                raw.push_row(&pattern)?;
            }
        }
        let span = chars * lexicon.frames_per_char;
        alignment.entries.push(AlignedWord {
            word: w.to_string(),
            start_frame: frame,
            end_frame: frame + span - 1,
        });
        frame += span;
    }
    for _ in 0..lexicon.tail_frames * STACK {
        raw.push_row(&silence)?;
    }
    if noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_level)
            .map_err(|e| Error::Config(format!("noise level: {e}")))?;
        for v in raw.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let features = stack_and_downsample(&RawFrames::new(raw), id)?;
    debug_assert_eq!(features.len(), frame + lexicon.tail_frames);
    Ok((features, alignment))
}

/// Settings for a whole synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Probability of following the preferred-successor grammar rather than
    /// picking the next word uniformly.
    pub grammar_strength: f64,
    pub id_prefix: String,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 500,
            min_words: 2,
            max_words: 4,
            noise_level: 0.1,
            seed: 42,
            grammar_strength: 0.7,
            id_prefix: "utt".into(),
        }
    }
}

/// Generates utterances whose word sequences follow a sparse bigram grammar
/// (three preferred successors per word), so the text side has structure an
/// n-gram model can learn.
pub fn synth_corpus(lexicon: &Lexicon, cfg: &SynthCorpusConfig) -> Result<Vec<Utterance>> {
    if lexicon.words.is_empty() {
        return Err(Error::Config("lexicon is empty".into()));
    }
    if cfg.min_words == 0 || cfg.max_words < cfg.min_words {
        return Err(Error::Config(format!(
            "invalid utterance length range {}..={}",
            cfg.min_words, cfg.max_words
        )));
    }
    let n = lexicon.words.len();
    // The grammar depends only on the lexicon so that splits generated with
    // different seeds share it.
    let mut grammar_rng = ChaCha8Rng::seed_from_u64(lexicon.pattern_seed.wrapping_add(1));
    let successors: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..3).map(|_| grammar_rng.gen_range(0..n)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.utterances);
    for u in 0..cfg.utterances {
        let len = rng.gen_range(cfg.min_words..=cfg.max_words);
        let mut idx = rng.gen_range(0..n);
        let mut words = vec![lexicon.words[idx].as_str()];
        while words.len() < len {
            idx = if rng.gen::<f64>() < cfg.grammar_strength {
                *successors[idx].choose(&mut rng).unwrap()
            } else {
                rng.gen_range(0..n)
            };
            words.push(lexicon.words[idx].as_str());
        }
        let id = format!("{}{:05}", cfg.id_prefix, u);
        let utt_seed = rng.gen::<u64>();
        let (features, alignment) =
            synth_utterance(&id, &words, lexicon, cfg.noise_level, utt_seed)?;
        out.push(Utterance {
            features,
            alignment,
            transcript: words.join(" "),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    transcript: String,
    frames: Vec<Vec<f64>>,
    alignment: Vec<(String, usize, usize)>,
}

fn validate_utterance(u: &Utterance) -> Result<()> {
    if u.features.is_empty() {
        return Err(Error::EmptyUtterance(Some(u.id().to_string())));
    }
    u.alignment.validate(u.features.len(), u.id())?;
    let aligned: Vec<&str> = u.alignment.words().collect();
    let words: Vec<&str> = u.transcript.split_whitespace().collect();
    if aligned != words {
        return Err(Error::Alignment {
            utterance: u.id().to_string(),
            message: format!("aligned words {aligned:?} differ from transcript {words:?}"),
        });
    }
    Ok(())
}

/// Reads a JSON-lines corpus, validating every utterance.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let frames = Tensor2::from_rows(&rec.frames).map_err(|e| parse_err(e.to_string()))?;
        let utt = Utterance {
            features: FeatureSequence::new(rec.id, frames),
            alignment: WordAlignment {
                entries: rec
                    .alignment
                    .into_iter()
                    .map(|(word, start_frame, end_frame)| AlignedWord {
                        word,
                        start_frame,
                        end_frame,
                    })
                    .collect(),
            },
            transcript: rec.transcript,
        };
        validate_utterance(&utt)?;
        out.push(utt);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for u in utterances {
        let rec = CorpusRecord {
            id: u.id().to_string(),
            transcript: u.transcript.clone(),
            frames: (0..u.features.len())
                .map(|t| u.features.frames.row(t).to_vec())
                .collect(),
            alignment: u
                .alignment
                .entries
                .iter()
                .map(|e| (e.word.clone(), e.start_frame, e.end_frame))
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Word frequencies over a corpus, sorted by word.
pub fn word_counts(utterances: &[Utterance]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for u in utterances {
        for w in u.transcript.split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_column(values: &[f64]) -> RawFrames {
        RawFrames::new(Tensor2::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap())
    }

    #[test]
    fn exact_division() {
        let raw = RawFrames::new(Tensor2::zeros(9, 2));
        let f = stack_and_downsample(&raw, "u").unwrap();
        assert_eq!((f.len(), f.dim()), (3, 6));
        assert_eq!(f.frame_shift_ms, 30);
    }

    #[test]
    fn remainder_rounds_up() {
        let raw = raw_column(&(1..=10).map(f64::from).collect::<Vec<_>>());
        let f = stack_and_downsample(&raw, "u").unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f.frames.row(3), &[8.0, 9.0, 10.0]);
    }

    #[test]
    fn stacking_fixture() {
        // Reference: out[t] = [x[max(3t-2,0)], x[max(3t-1,0)], x[3t]] for x = 1..=9.
        let raw = raw_column(&(1..=9).map(f64::from).collect::<Vec<_>>());
        let f = stack_and_downsample(&raw, "u").unwrap();
        assert_eq!(f.frames.row(0), &[1.0, 1.0, 1.0]);
        assert_eq!(f.frames.row(1), &[2.0, 3.0, 4.0]);
        assert_eq!(f.frames.row(2), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn ceil_division_law() {
        for n in 1..=100 {
            let raw = RawFrames::new(Tensor2::zeros(n, 1));
            assert_eq!(stack_and_downsample(&raw, "u").unwrap().len(), n.div_ceil(3));
        }
    }

    #[test]
    fn empty_raw_is_rejected() {
        let raw = RawFrames::new(Tensor2::zeros(0, 4));
        assert!(matches!(stack_and_downsample(&raw, "x"), Err(Error::EmptyUtterance(_))));
    }

    #[test]
    fn single_word_span() {
        let lex = Lexicon::new(vec!["ab".into()]);
        let (f, a) = synth_utterance("u", &["ab"], &lex, 0.0, 1).unwrap();
        assert_eq!(f.len(), 4 + lex.tail_frames);
        assert!(f.frames.row(f.len() - 1).iter().all(|&v| v == 0.0));
        assert_eq!(f.dim(), 24);
        assert_eq!(
            a.entries,
            vec![AlignedWord {
                word: "ab".into(),
                start_frame: 0,
                end_frame: 3
            }]
        );
    }

    #[test]
    fn synth_is_deterministic() {
        let lex = Lexicon::random(10, 8, 3);
        let words: Vec<&str> = lex.words[..3].iter().map(String::as_str).collect();
        let a = synth_utterance("u", &words, &lex, 0.1, 99).unwrap();
        let b = synth_utterance("u", &words, &lex, 0.1, 99).unwrap();
        assert_eq!(a, b);
        let c = synth_utterance("u", &words, &lex, 0.1, 100).unwrap();
        assert_ne!(a.0, c.0);
        a.1.validate(a.0.len(), "u").unwrap();
    }

    #[test]
    fn unknown_word() {
        let lex = Lexicon::new(vec!["ab".into()]);
        assert!(matches!(
            synth_utterance("u", &["zz"], &lex, 0.0, 1),
            Err(Error::UnknownWord(w)) if w == "zz"
        ));
    }

    #[test]
    fn alignment_validation() {
        let mk = |spans: &[(usize, usize)]| WordAlignment {
            entries: spans
                .iter()
                .map(|&(s, e)| AlignedWord {
                    word: "w".into(),
                    start_frame: s,
                    end_frame: e,
                })
                .collect(),
        };
        assert!(mk(&[(0, 2), (3, 5)]).validate(6, "u").is_ok());
        assert!(mk(&[(0, 2), (2, 5)]).validate(6, "u").is_err());
        assert!(mk(&[(3, 2)]).validate(6, "u").is_err());
        assert!(mk(&[(0, 6)]).validate(6, "u").is_err());
    }
}
