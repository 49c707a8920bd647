//! Block-synchronous beam search for the streaming transducer, the
//! full-sequence variant for LAS, and an exhaustive search used as an oracle
//! on tiny problems.
//!
//! Within a block every live hypothesis is extended by one decoder step at a
//! time. Its epsilon child closes the block; content children keep going
//! until the per-block cap is reached, after which epsilon is forced. All
//! hypotheses meet again at the block boundary.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::Range;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::lm::{fused_score, FusionWeights, NGramLM};
use crate::models::{decoder_step, DecoderState, EncodedUtterance, ModelParams, StreamingEncoder, WindowSpec};
use crate::numerics::Tensor2;
use crate::tokenizer::{EOS, EPSILON, SOS};

/// Shallow fusion settings. `lm` may be absent when only the coverage term
/// is wanted.
#[derive(Debug, Clone, Copy)]
pub struct Fusion<'a> {
    pub lm: Option<&'a NGramLM>,
    pub weights: FusionWeights,
}

#[derive(Debug, Clone)]
pub struct SearchOptions<'a> {
    pub beam: usize,
    /// Most content tokens per block (total length for full-sequence search).
    pub max_per_block: usize,
    /// Units a hypothesis may emit besides the terminator.
    pub emittable: Vec<usize>,
    pub fusion: Option<Fusion<'a>>,
    /// Record the beam after every block.
    pub keep_snapshots: bool,
}

impl<'a> SearchOptions<'a> {
    pub fn new(beam: usize, max_per_block: usize, emittable: impl IntoIterator<Item = usize>) -> Self {
        Self {
            beam,
            max_per_block,
            emittable: emittable.into_iter().collect(),
            fusion: None,
            keep_snapshots: false,
        }
    }

    pub fn with_fusion(mut self, fusion: Fusion<'a>) -> Self {
        self.fusion = Some(fusion);
        self
    }

    fn validate(&self, vocab: usize) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_per_block == 0 {
            return Err(Error::Config("per-block cap must be at least 1".into()));
        }
        if self.emittable.is_empty() {
            return Err(Error::Config("no emittable units".into()));
        }
        for &u in &self.emittable {
            if u >= vocab || u == EPSILON || u == EOS || u == SOS {
                return Err(Error::Config(format!("unit {u} cannot be emitted as content")));
            }
        }
        if let Some(Fusion { lm: Some(lm), .. }) = self.fusion {
            if let Some(&u) = self.emittable.iter().find(|&&u| u >= lm.vocab()) {
                return Err(Error::LanguageModel(format!(
                    "unit {u} outside the language model vocabulary of {}",
                    lm.vocab()
                )));
            }
        }
        Ok(())
    }

    fn weights(&self) -> FusionWeights {
        self.fusion.map_or(
            FusionWeights {
                lambda: 0.0,
                eta: 0.0,
                beta: 0.5,
            },
            |f| f.weights,
        )
    }
}

/// Adds one step's attention weights into the per-frame accumulator, growing
/// it as needed. `offset` is the absolute frame of `weights[0]`.
pub fn update_coverage(history: &mut Vec<f64>, weights: &[f64], offset: usize) {
    let end = offset + weights.len();
    if history.len() < end {
        history.resize(end, 0.0);
    }
    for (h, w) in history[offset..end].iter_mut().zip(weights) {
        *h += w;
    }
}

/// Number of frames whose accumulated mass exceeds `beta`.
pub fn coverage(history: &[f64], beta: f64) -> usize {
    history.iter().filter(|&&m| m > beta).count()
}

#[derive(Debug)]
struct Trace {
    parent: Option<Rc<Trace>>,
    window_start: usize,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    content: Vec<usize>,
    block_count: usize,
    prev: usize,
    state: DecoderState,
    score_model: f64,
    score_lm: f64,
    mass: Vec<f64>,
    coverage: usize,
    fused: f64,
    trace: Option<Rc<Trace>>,
    forced: usize,
}

impl Hyp {
    fn root(params: &ModelParams) -> Self {
        Self {
            tokens: Vec::new(),
            content: Vec::new(),
            block_count: 0,
            prev: SOS,
            state: DecoderState::initial(params),
            score_model: 0.0,
            score_lm: 0.0,
            mass: Vec::new(),
            coverage: 0,
            fused: 0.0,
            trace: None,
            forced: 0,
        }
    }

    fn entry(&self) -> BeamEntry {
        BeamEntry {
            tokens: self.tokens.clone(),
            score_model: self.score_model,
            score_lm: self.score_lm,
            coverage: self.coverage,
            score: self.fused,
        }
    }
}

/// Higher fused score first, then fewer tokens, then lexicographic order.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn rank_hyps(a: &Hyp, b: &Hyp) -> Ordering {
    rank(a.fused, &a.tokens, b.fused, &b.tokens)
}

fn prune(hyps: &mut Vec<Hyp>, beam: usize) {
    hyps.sort_by(rank_hyps);
    hyps.truncate(beam);
}

/// A scored hypothesis as exposed in diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    /// Emitted units including terminators.
    pub tokens: Vec<usize>,
    pub score_model: f64,
    pub score_lm: f64,
    pub coverage: usize,
    /// `score_model + λ·score_lm + η·coverage`.
    pub score: f64,
}

impl BeamEntry {
    /// Tokens with epsilon and end-of-sentence removed.
    pub fn content(&self) -> Vec<usize> {
        self.tokens.iter().copied().filter(|&t| t != EPSILON && t != EOS).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchDiagnostics {
    pub blocks: usize,
    /// Decoder steps run across all hypotheses.
    pub expansions: usize,
    /// Times the cap forced a terminator the model did not rank first.
    pub forced_terminators: usize,
    pub final_beam: Vec<BeamEntry>,
    /// Beam after each block, when requested.
    pub snapshots: Vec<Vec<BeamEntry>>,
}

/// Head-averaged attention of every output step of the best hypothesis,
/// one row per step and one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AttentionMatrix {
    fn from_trace(trace: Option<&Rc<Trace>>, frames: usize) -> Self {
        let mut rows = Vec::new();
        let mut cur = trace;
        while let Some(t) = cur {
            let mut row = vec![0.0; frames];
            row[t.window_start..t.window_start + t.weights.len()].copy_from_slice(&t.weights);
            rows.push(row);
            cur = t.parent.as_ref();
        }
        rows.reverse();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub best: BeamEntry,
    pub attention: AttentionMatrix,
    pub diagnostics: SearchDiagnostics,
}

impl DecodeResult {
    pub fn content(&self) -> Vec<usize> {
        self.best.content()
    }
}

struct Search<'p, 'o> {
    params: &'p ModelParams,
    opts: &'o SearchOptions<'o>,
    weights: FusionWeights,
    beam: Vec<Hyp>,
    diag: SearchDiagnostics,
}

impl<'p, 'o> Search<'p, 'o> {
    fn new(params: &'p ModelParams, opts: &'o SearchOptions<'o>) -> Result<Self> {
        opts.validate(params.config.vocab)?;
        Ok(Self {
            params,
            opts,
            weights: opts.weights(),
            beam: vec![Hyp::root(params)],
            diag: SearchDiagnostics::default(),
        })
    }

    fn lm(&self) -> Option<&NGramLM> {
        self.opts.fusion.and_then(|f| f.lm)
    }

    /// Runs one block: every hypothesis expands until it emits `terminator`.
    fn run_block(&mut self, enc: &EncodedUtterance, window: Range<usize>, terminator: usize) -> Result<()> {
        let beam = self.opts.beam;
        let cap = self.opts.max_per_block;
        let w = self.weights;
        // Without a coverage bonus scores only fall, so a live hypothesis
        // already below a full finished set cannot re-enter it.
        let monotone = w.eta == 0.0;
        let mut active = std::mem::take(&mut self.beam);
        for h in &mut active {
            h.block_count = 0;
        }
        let mut finished: Vec<Hyp> = Vec::new();
        // Lower bound on the worst score of the final finished set; only
        // ever raised, at prune time.
        let mut floor = f64::NEG_INFINITY;
        let prune_finished = |finished: &mut Vec<Hyp>, floor: &mut f64| {
            prune(finished, beam);
            if monotone && finished.len() == beam {
                *floor = finished[beam - 1].fused;
            }
        };
        while !active.is_empty() {
            let mut next = Vec::new();
            for h in active {
                if h.fused < floor {
                    continue;
                }
                let step = decoder_step(self.params, enc, &h.state, h.prev, window.clone())?;
                self.diag.expansions += 1;
                let lp = &step.log_probs;
                let trace = Rc::new(Trace {
                    parent: h.trace.clone(),
                    window_start: window.start,
                    weights: step.attention.clone(),
                });

                let mut done = h.clone();
                done.tokens.push(terminator);
                done.prev = terminator;
                done.state = step.state.clone();
                done.score_model += lp[terminator];
                done.fused = fused_score(done.score_model, done.score_lm, done.coverage as f64, &w);
                done.trace = Some(trace.clone());
                if h.block_count >= cap {
                    let best_content = self.opts.emittable.iter().map(|&u| lp[u]).fold(f64::NEG_INFINITY, f64::max);
                    if best_content > lp[terminator] {
                        done.forced += 1;
                        self.diag.forced_terminators += 1;
                    }
                }
                finished.push(done);

                if h.block_count < cap {
                    let mut mass = h.mass.clone();
                    update_coverage(&mut mass, &step.attention, window.start);
                    let cov = coverage(&mass, w.beta);
                    for &u in &self.opts.emittable {
                        let lm_lp = match self.lm() {
                            Some(lm) => lm.log_prob(&h.content, u)?,
                            None => 0.0,
                        };
                        let mut child = h.clone();
                        child.tokens.push(u);
                        child.content.push(u);
                        child.block_count += 1;
                        child.prev = u;
                        child.state = step.state.clone();
                        child.score_model += lp[u];
                        child.score_lm += lm_lp;
                        child.mass.clone_from(&mass);
                        child.coverage = cov;
                        child.fused = fused_score(child.score_model, child.score_lm, cov as f64, &w);
                        child.trace = Some(trace.clone());
                        next.push(child);
                    }
                }
                if finished.len() >= beam.saturating_mul(2) {
                    prune_finished(&mut finished, &mut floor);
                }
            }
            prune_finished(&mut finished, &mut floor);
            prune(&mut next, beam);
            active = next;
        }
        self.beam = finished;
        self.diag.blocks += 1;
        if self.opts.keep_snapshots {
            self.diag.snapshots.push(self.beam.iter().map(Hyp::entry).collect());
        }
        Ok(())
    }

    fn finish(mut self, frames: usize) -> DecodeResult {
        let best = &self.beam[0];
        let attention = AttentionMatrix::from_trace(best.trace.as_ref(), frames);
        let best = best.entry();
        self.diag.final_beam = self.beam.iter().map(Hyp::entry).collect();
        DecodeResult {
            best,
            attention,
            diagnostics: self.diag,
        }
    }
}

/// Incremental decoder: feed frames as they arrive, blocks are searched as
/// soon as their attention window is complete.
pub struct StreamingDecoder<'p, 'o> {
    encoder: StreamingEncoder<'p>,
    spec: WindowSpec,
    search: Search<'p, 'o>,
    next_block: usize,
}

impl<'p, 'o> StreamingDecoder<'p, 'o> {
    pub fn new(params: &'p ModelParams, spec: WindowSpec, opts: &'o SearchOptions<'o>) -> Result<Self> {
        WindowSpec::new(spec.block_size, spec.lookback, spec.lookahead)?;
        Ok(Self {
            encoder: StreamingEncoder::new(params),
            spec,
            search: Search::new(params, opts)?,
            next_block: 0,
        })
    }

    pub fn push_frame(&mut self, frame: &[f64]) -> Result<()> {
        self.encoder.push(frame)?;
        while self.encoder.encoded().len() > self.spec.last_visible_frame(self.next_block) {
            let window = self.spec.frames(self.next_block, usize::MAX);
            self.search.run_block(self.encoder.encoded(), window, EPSILON)?;
            self.next_block += 1;
        }
        Ok(())
    }

    pub fn push_frames(&mut self, frames: &Tensor2) -> Result<()> {
        (0..frames.rows()).try_for_each(|t| self.push_frame(frames.row(t)))
    }

    pub fn blocks_done(&self) -> usize {
        self.next_block
    }

    /// Best hypothesis at the last completed block boundary.
    pub fn partial(&self) -> BeamEntry {
        self.search.beam[0].entry()
    }

    /// Flushes the remaining blocks now that the utterance length is known.
    pub fn finish(mut self) -> Result<DecodeResult> {
        let frames = self.encoder.encoded().len();
        if frames == 0 {
            return Err(Error::EmptyUtterance(None));
        }
        let blocks = frames.div_ceil(self.spec.block_size);
        while self.next_block < blocks {
            let window = self.spec.frames(self.next_block, frames);
            self.search.run_block(self.encoder.encoded(), window, EPSILON)?;
            self.next_block += 1;
        }
        Ok(self.search.finish(frames))
    }
}

fn check_input(params: &ModelParams, x: &FeatureSequence) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyUtterance(Some(x.utterance_id.clone())));
    }
    if x.dim() != params.config.feature_dim {
        return Err(Error::shape("feature dimension", params.config.feature_dim, x.dim()));
    }
    Ok(())
}

/// Streaming beam search over a whole utterance.
pub fn beam_search(
    params: &ModelParams,
    x: &FeatureSequence,
    spec: WindowSpec,
    opts: &SearchOptions<'_>,
) -> Result<DecodeResult> {
    check_input(params, x)?;
    let mut dec = StreamingDecoder::new(params, spec, opts)?;
    dec.push_frames(&x.frames)
        .map_err(|e| with_utterance(e, &x.utterance_id))?;
    dec.finish()
}

fn with_utterance(e: Error, id: &str) -> Error {
    match e {
        Error::EmptyUtterance(None) => Error::EmptyUtterance(Some(id.to_string())),
        other => other,
    }
}

/// Full-sequence beam search: one block spanning every frame, closed by
/// end-of-sentence, with `opts.max_per_block` bounding the output length.
pub fn las_beam_search(params: &ModelParams, x: &FeatureSequence, opts: &SearchOptions<'_>) -> Result<DecodeResult> {
    check_input(params, x)?;
    let enc = crate::models::encode_utterance(params, x)?;
    let mut search = Search::new(params, opts)?;
    search.run_block(&enc, 0..x.len(), EOS)?;
    Ok(search.finish(x.len()))
}

/// Number of label sequences an exhaustive search would score, saturating.
pub fn enumeration_size(content_units: usize, blocks: usize, cap: usize) -> u128 {
    let c = content_units as u128;
    let mut per_block: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..=cap {
        per_block = per_block.saturating_add(pow);
        pow = pow.saturating_mul(c);
    }
    (0..blocks).fold(1u128, |acc, _| acc.saturating_mul(per_block))
}

pub const ENUMERATION_LIMIT: u128 = 1_000_000;

struct Exhaustive<'p, 'o> {
    params: &'p ModelParams,
    enc: EncodedUtterance,
    windows: Vec<Range<usize>>,
    terminator: usize,
    opts: &'o SearchOptions<'o>,
    weights: FusionWeights,
    best: Option<BeamEntry>,
}

impl Exhaustive<'_, '_> {
    #[allow(clippy::too_many_arguments)]
    fn visit(
        &mut self,
        block: usize,
        count: usize,
        prev: usize,
        state: &DecoderState,
        tokens: &mut Vec<usize>,
        content: &mut Vec<usize>,
        mass: &[f64],
        model: f64,
        lm_score: f64,
    ) -> Result<()> {
        if block == self.windows.len() {
            let cov = coverage(mass, self.weights.beta);
            let score = fused_score(model, lm_score, cov as f64, &self.weights);
            let better = self
                .best
                .as_ref()
                .map_or(true, |b| rank(score, tokens, b.score, &b.tokens) == Ordering::Less);
            if better {
                self.best = Some(BeamEntry {
                    tokens: tokens.clone(),
                    score_model: model,
                    score_lm: lm_score,
                    coverage: cov,
                    score,
                });
            }
            return Ok(());
        }
        let window = self.windows[block].clone();
        let step = decoder_step(self.params, &self.enc, state, prev, window.clone())?;
        let lp = &step.log_probs;
        tokens.push(self.terminator);
        self.visit(block + 1, 0, self.terminator, &step.state, tokens, content, mass, model + lp[self.terminator], lm_score)?;
        tokens.pop();
        if count < self.opts.max_per_block {
            let mut next_mass = mass.to_vec();
            update_coverage(&mut next_mass, &step.attention, window.start);
            let lm = self.opts.fusion.and_then(|f| f.lm);
            for &u in &self.opts.emittable.clone() {
                let lm_lp = match lm {
                    Some(lm) => lm.log_prob(content, u)?,
                    None => 0.0,
                };
                tokens.push(u);
                content.push(u);
                self.visit(block, count + 1, u, &step.state, tokens, content, &next_mass, model + lp[u], lm_score + lm_lp)?;
                content.pop();
                tokens.pop();
            }
        }
        Ok(())
    }
}

fn exhaustive(
    params: &ModelParams,
    x: &FeatureSequence,
    windows: Vec<Range<usize>>,
    terminator: usize,
    opts: &SearchOptions<'_>,
) -> Result<BeamEntry> {
    check_input(params, x)?;
    opts.validate(params.config.vocab)?;
    let count = enumeration_size(opts.emittable.len(), windows.len(), opts.max_per_block);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationBound {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut ex = Exhaustive {
        params,
        enc: crate::models::encode_utterance(params, x)?,
        windows,
        terminator,
        opts,
        weights: opts.weights(),
        best: None,
    };
    let init = DecoderState::initial(params);
    ex.visit(0, 0, SOS, &init, &mut Vec::new(), &mut Vec::new(), &[], 0.0, 0.0)?;
    Ok(ex.best.expect("at least one sequence is enumerated"))
}

/// Scores every legal epsilon-placed sequence and returns the best one.
/// Only `opts.emittable`, `opts.max_per_block` and `opts.fusion` are used.
pub fn exhaustive_decode(
    params: &ModelParams,
    x: &FeatureSequence,
    spec: WindowSpec,
    opts: &SearchOptions<'_>,
) -> Result<BeamEntry> {
    let blocks = x.len().div_ceil(spec.block_size.max(1));
    let windows = (0..blocks).map(|b| spec.frames(b, x.len())).collect();
    exhaustive(params, x, windows, EPSILON, opts)
}

/// Exhaustive counterpart of [`las_beam_search`].
pub fn las_exhaustive_decode(params: &ModelParams, x: &FeatureSequence, opts: &SearchOptions<'_>) -> Result<BeamEntry> {
    exhaustive(params, x, vec![0..x.len()], EOS, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, content: usize) -> (ModelParams, FeatureSequence) {
        let cfg = ModelConfig {
            encoder_layers: 1,
            encoder_width: 6,
            decoder_layers: 1,
            decoder_width: 6,
            embed_dim: 3,
            attention_dim: 4,
            ..ModelConfig::new(3, 4 + content)
        };
        let mut params = ModelParams::init(cfg, seed).unwrap();
        // Larger weights make the distributions less flat.
        params.scale(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let t = rng.gen_range(2..=8);
        let data = (0..t * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = FeatureSequence::new("u", Tensor2::from_vec(t, 3, data).unwrap());
        (params, x)
    }

    #[test]
    fn coverage_examples() {
        let mut h = Vec::new();
        update_coverage(&mut h, &[1.0], 3);
        assert_eq!(coverage(&h, 0.5), 1);

        let mut h = Vec::new();
        update_coverage(&mut h, &[0.1; 10], 0);
        assert_eq!(coverage(&h, 0.5), 0);

        let mut h = Vec::new();
        update_coverage(&mut h, &[0.3], 7);
        assert_eq!(coverage(&h, 0.5), 0);
        update_coverage(&mut h, &[0.3], 7);
        assert_eq!(coverage(&h, 0.5), 1);
    }

    #[test]
    fn saturated_beam_matches_exhaustive() {
        for seed in 0..20 {
            let (params, x) = tiny(seed, 2);
            let spec = WindowSpec::new(4, 1, 1).unwrap();
            let blocks = x.len().div_ceil(4);
            let beam = enumeration_size(2, blocks, 2) as usize;
            let opts = SearchOptions::new(beam, 2, 4..6);
            let got = beam_search(&params, &x, spec, &opts).unwrap();
            let want = exhaustive_decode(&params, &x, spec, &opts).unwrap();
            assert_eq!(got.best.tokens, want.tokens, "seed {seed}");
            assert!((got.best.score - want.score).abs() <= 1e-10);
        }
    }

    #[test]
    fn cap_of_one_is_respected() {
        for seed in 0..5 {
            let (params, x) = tiny(seed, 3);
            let spec = WindowSpec::new(2, 1, 0).unwrap();
            let opts = SearchOptions::new(4, 1, 4..7);
            let r = beam_search(&params, &x, spec, &opts).unwrap();
            for entry in &r.diagnostics.final_beam {
                let blocks: Vec<&[usize]> = entry.tokens.split(|&t| t == EPSILON).collect();
                assert_eq!(blocks.len(), x.len().div_ceil(2) + 1);
                assert!(blocks.iter().all(|b| b.len() <= 1));
            }
        }
    }

    #[test]
    fn attention_matrix_has_one_row_per_step() {
        let (params, x) = tiny(3, 2);
        let spec = WindowSpec::new(3, 2, 1).unwrap();
        let r = beam_search(&params, &x, spec, &SearchOptions::new(3, 2, 4..6)).unwrap();
        assert_eq!(r.attention.rows.len(), r.best.tokens.len());
        for row in &r.attention.rows {
            assert_eq!(row.len(), x.len());
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.attention.to_csv().lines().count(), r.best.tokens.len());
    }

    #[test]
    fn full_sequence_matches_exhaustive() {
        for seed in 0..10 {
            let (params, x) = tiny(seed + 100, 2);
            let opts = SearchOptions::new(enumeration_size(2, 1, 3) as usize, 3, 4..6);
            let got = las_beam_search(&params, &x, &opts).unwrap();
            let want = las_exhaustive_decode(&params, &x, &opts).unwrap();
            assert_eq!(got.best.tokens, want.tokens);
            assert_eq!(*got.best.tokens.last().unwrap(), EOS);
        }
    }

    #[test]
    fn invalid_options_rejected() {
        let (params, x) = tiny(1, 2);
        let spec = WindowSpec::new(2, 1, 0).unwrap();
        assert!(beam_search(&params, &x, spec, &SearchOptions::new(0, 1, 4..6)).is_err());
        assert!(beam_search(&params, &x, spec, &SearchOptions::new(2, 0, 4..6)).is_err());
        assert!(beam_search(&params, &x, spec, &SearchOptions::new(2, 1, 0..6)).is_err());
        let empty = FeatureSequence::new("e", Tensor2::zeros(0, 3));
        assert!(matches!(
            beam_search(&params, &empty, spec, &SearchOptions::new(2, 1, 4..6)),
            Err(Error::EmptyUtterance(_))
        ));
    }

    #[test]
    fn enumeration_bound_is_enforced() {
        let (params, x) = tiny(2, 2);
        let spec = WindowSpec::new(1, 1, 0).unwrap();
        let opts = SearchOptions::new(1, 8, 4..6);
        if enumeration_size(2, x.len(), 8) > ENUMERATION_LIMIT {
            assert!(matches!(
                exhaustive_decode(&params, &x, spec, &opts),
                Err(Error::EnumerationBound { .. })
            ));
        }
        assert_eq!(enumeration_size(2, 2, 2), 49);
    }
}
