//! Forward and backward passes of the listener / attender / speller.
//!
//! Decoder step `i` attends with the previous top-layer hidden state as the
//! query, feeds `[embed(y_{i-1}); context]` through the decoder stack, and
//! projects `[h_top; context]` to logits. Decoder state carries across
//! blocks; only the attention window changes.

use std::ops::Range;

use super::params::ModelParams;
use super::window::WindowSpec;
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::numerics::{log_softmax, AttentionCache, LstmCache, LstmState, Tensor2};
use crate::targets::BlockTargets;
use crate::tokenizer::{EPSILON, SOS};

/// Encoder states plus each head's projected keys.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUtterance {
    pub states: Tensor2,
    pub(crate) projected: Vec<Tensor2>,
}

impl EncodedUtterance {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Unidirectional encoder fed one frame at a time.
#[derive(Debug, Clone)]
pub struct StreamingEncoder<'a> {
    params: &'a ModelParams,
    state: Vec<LstmState>,
    out: EncodedUtterance,
}

impl<'a> StreamingEncoder<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let c = &params.config;
        Self {
            params,
            state: vec![LstmState::zeros(c.encoder_width); c.encoder_layers],
            out: EncodedUtterance {
                states: Tensor2::zeros(0, c.encoder_width),
                projected: vec![Tensor2::zeros(0, c.attention_dim); c.heads],
            },
        }
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        let c = &self.params.config;
        if frame.len() != c.feature_dim {
            return Err(Error::shape("feature frame", c.feature_dim, frame.len()));
        }
        let mut input = frame.to_vec();
        for (layer, state) in self.params.encoder.iter().zip(self.state.iter_mut()) {
            let (next, _) = layer.forward(&input, state);
            input.clone_from(&next.hidden);
            *state = next;
        }
        let mha = &self.params.attention;
        for (j, head) in mha.heads.iter().enumerate() {
            let cols = mha.head_cols(j, c.encoder_width);
            let p = head.project_key_row(&input[cols]);
            self.out.projected[j].push_row(&p)?;
        }
        self.out.states.push_row(&input)?;
        Ok(())
    }

    pub fn encoded(&self) -> &EncodedUtterance {
        &self.out
    }

    pub fn into_encoded(self) -> EncodedUtterance {
        self.out
    }
}

fn check_features(params: &ModelParams, x: &FeatureSequence) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyUtterance(Some(x.utterance_id.clone())));
    }
    if x.dim() != params.config.feature_dim {
        return Err(Error::shape("feature dimension", params.config.feature_dim, x.dim()));
    }
    Ok(())
}

/// Runs the encoder over the whole utterance. Row `t` depends only on
/// frames `0..=t`.
pub fn encode_utterance(params: &ModelParams, x: &FeatureSequence) -> Result<EncodedUtterance> {
    check_features(params, x)?;
    let mut enc = StreamingEncoder::new(params);
    for t in 0..x.len() {
        enc.push(x.frames.row(t))?;
    }
    Ok(enc.into_encoded())
}

type EncoderCaches = Vec<Vec<LstmCache>>;

fn encode_cached(params: &ModelParams, x: &FeatureSequence) -> Result<(EncodedUtterance, EncoderCaches)> {
    check_features(params, x)?;
    let c = &params.config;
    let mut state = vec![LstmState::zeros(c.encoder_width); c.encoder_layers];
    let mut caches: EncoderCaches = vec![Vec::with_capacity(x.len()); c.encoder_layers];
    let mut states = Tensor2::zeros(x.len(), c.encoder_width);
    for t in 0..x.len() {
        let mut input = x.frames.row(t).to_vec();
        for (l, layer) in params.encoder.iter().enumerate() {
            let (next, cache) = layer.forward(&input, &state[l]);
            input.clone_from(&next.hidden);
            state[l] = next;
            caches[l].push(cache);
        }
        states.row_mut(t).copy_from_slice(&input);
    }
    let mha = &params.attention;
    let projected = mha
        .heads
        .iter()
        .enumerate()
        .map(|(j, h)| h.project_keys(&states, mha.head_cols(j, c.encoder_width)))
        .collect();
    Ok((EncodedUtterance { states, projected }, caches))
}

/// Decoder recurrent state (one LSTM state per layer).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
}

impl DecoderState {
    pub fn initial(params: &ModelParams) -> Self {
        let c = &params.config;
        Self {
            layers: vec![LstmState::zeros(c.decoder_width); c.decoder_layers],
        }
    }

    fn query(&self) -> &[f64] {
        &self.layers.last().expect("decoder has layers").hidden
    }
}

/// Result of one decoder step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub state: DecoderState,
    /// Attention weights over `window`, averaged across heads.
    pub attention: Vec<f64>,
    pub window: Range<usize>,
}

struct StepCache {
    query: Vec<f64>,
    prev_token: usize,
    attention: Vec<AttentionCache>,
    lstm: Vec<LstmCache>,
    out_input: Vec<f64>,
    log_probs: Vec<f64>,
}

fn step_impl(
    params: &ModelParams,
    enc: &EncodedUtterance,
    state: &DecoderState,
    prev_token: usize,
    window: Range<usize>,
) -> (StepOutput, StepCache) {
    let c = &params.config;
    let mha = &params.attention;
    let query = state.query().to_vec();
    let mut context = Vec::with_capacity(c.encoder_width);
    let mut att_caches = Vec::with_capacity(c.heads);
    let mut attention = vec![0.0; window.len()];
    for (j, head) in mha.heads.iter().enumerate() {
        let cols = mha.head_cols(j, c.encoder_width);
        let (ctx, cache) = head.attend(&query, &enc.projected[j], &enc.states, cols, window.clone());
        for (a, w) in attention.iter_mut().zip(&ctx.weights) {
            *a += w;
        }
        context.extend_from_slice(&ctx.context);
        att_caches.push(cache);
    }
    if c.heads > 1 {
        let k = c.heads as f64;
        attention.iter_mut().for_each(|a| *a /= k);
    }

    let mut input = Vec::with_capacity(c.embed_dim + c.encoder_width);
    input.extend_from_slice(params.embedding.row(prev_token));
    input.extend_from_slice(&context);
    let mut layers = Vec::with_capacity(c.decoder_layers);
    let mut lstm_caches = Vec::with_capacity(c.decoder_layers);
    for (layer, s) in params.decoder.iter().zip(&state.layers) {
        let (next, cache) = layer.forward(&input, s);
        input.clone_from(&next.hidden);
        layers.push(next);
        lstm_caches.push(cache);
    }
    let mut out_input = input;
    out_input.extend_from_slice(&context);
    let mut logits = params.output_bias.clone();
    params.output.matvec_acc(&out_input, &mut logits);
    let log_probs = log_softmax(&logits);

    let out = StepOutput {
        log_probs: log_probs.clone(),
        state: DecoderState { layers },
        attention,
        window,
    };
    let cache = StepCache {
        query,
        prev_token,
        attention: att_caches,
        lstm: lstm_caches,
        out_input,
        log_probs,
    };
    (out, cache)
}

/// One decoder step attending over `window` (0-based, half-open).
pub fn decoder_step(
    params: &ModelParams,
    enc: &EncodedUtterance,
    state: &DecoderState,
    prev_token: usize,
    window: Range<usize>,
) -> Result<StepOutput> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if window.end > enc.len() {
        return Err(Error::shape("attention window end", enc.len(), window.end));
    }
    if prev_token >= params.config.vocab {
        return Err(Error::Label {
            label: prev_token,
            classes: params.config.vocab,
        });
    }
    Ok(step_impl(params, enc, state, prev_token, window).0)
}

/// Teacher-forced pass result.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Mean negative log-probability of the target tokens.
    pub loss: f64,
    pub token_log_probs: Vec<f64>,
    /// Full log-distribution at every step.
    pub step_log_probs: Vec<Vec<f64>>,
    /// Head-averaged attention weights and window of every step.
    pub attention: Vec<(Range<usize>, Vec<f64>)>,
}

fn check_targets(params: &ModelParams, tokens: &[usize], windows: &[Range<usize>], frames: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Config("target sequence is empty".into()));
    }
    if tokens.len() != windows.len() {
        return Err(Error::shape("attention windows", tokens.len(), windows.len()));
    }
    for &t in tokens {
        if t >= params.config.vocab {
            return Err(Error::Label {
                label: t,
                classes: params.config.vocab,
            });
        }
    }
    for w in windows {
        if w.is_empty() {
            return Err(Error::EmptyWindow);
        }
        if w.end > frames {
            return Err(Error::shape("attention window end", frames, w.end));
        }
    }
    Ok(())
}

/// Teacher-forced forward over `tokens`, step `i` attending over
/// `windows[i]`. When `grads` is given, the gradient of the mean loss is
/// added into it.
pub fn forward_tokens(
    params: &ModelParams,
    x: &FeatureSequence,
    tokens: &[usize],
    windows: &[Range<usize>],
    grads: Option<&mut ModelParams>,
) -> Result<ForwardOutput> {
    check_features(params, x)?;
    check_targets(params, tokens, windows, x.len())?;
    let (enc, enc_caches) = encode_cached(params, x)?;

    let n = tokens.len();
    let mut state = DecoderState::initial(params);
    let mut caches = Vec::with_capacity(if grads.is_some() { n } else { 0 });
    let mut out = ForwardOutput {
        loss: 0.0,
        token_log_probs: Vec::with_capacity(n),
        step_log_probs: Vec::with_capacity(n),
        attention: Vec::with_capacity(n),
    };
    let mut prev = SOS;
    for (i, &target) in tokens.iter().enumerate() {
        let (step, cache) = step_impl(params, &enc, &state, prev, windows[i].clone());
        let lp = step.log_probs[target];
        out.loss -= lp;
        out.token_log_probs.push(lp);
        out.step_log_probs.push(step.log_probs);
        out.attention.push((step.window, step.attention));
        state = step.state;
        if grads.is_some() {
            caches.push(cache);
        }
        prev = target;
    }
    out.loss /= n as f64;

    if let Some(g) = grads {
        backward(params, &enc, &enc_caches, tokens, &caches, g);
    }
    Ok(out)
}

fn backward(
    params: &ModelParams,
    enc: &EncodedUtterance,
    enc_caches: &EncoderCaches,
    tokens: &[usize],
    caches: &[StepCache],
    grads: &mut ModelParams,
) {
    let c = &params.config;
    let n = tokens.len();
    let scale = 1.0 / n as f64;
    let hd = c.decoder_width;
    let mha = &params.attention;

    let mut d_states = Tensor2::zeros(enc.len(), c.encoder_width);
    let mut d_projected: Vec<Tensor2> = (0..c.heads)
        .map(|_| Tensor2::zeros(enc.len(), c.attention_dim))
        .collect();
    let mut carry: Vec<LstmState> = vec![LstmState::zeros(hd); c.decoder_layers];

    for i in (0..n).rev() {
        let cache = &caches[i];
        let mut d_logits: Vec<f64> = cache.log_probs.iter().map(|lp| lp.exp() * scale).collect();
        d_logits[tokens[i]] -= scale;
        grads.output.outer_acc(&d_logits, &cache.out_input);
        for (b, d) in grads.output_bias.iter_mut().zip(&d_logits) {
            *b += d;
        }
        let mut d_out_input = vec![0.0; hd + c.encoder_width];
        params.output.matvec_t_acc(&d_logits, &mut d_out_input);
        let mut d_context = d_out_input.split_off(hd);
        let mut d_hidden = d_out_input;

        for l in (0..c.decoder_layers).rev() {
            let layer = &params.decoder[l];
            for (a, b) in d_hidden.iter_mut().zip(&carry[l].hidden) {
                *a += b;
            }
            let mut d_input = vec![0.0; layer.input_width()];
            let prev =
                layer.backward(&cache.lstm[l], &d_hidden, &carry[l].cell, &mut grads.decoder[l], &mut d_input);
            carry[l] = prev;
            d_hidden = d_input;
        }
        // d_hidden now holds the gradient of [embedding; context].
        let d_embed = &d_hidden[..c.embed_dim];
        for (e, d) in grads.embedding.row_mut(cache.prev_token).iter_mut().zip(d_embed) {
            *e += d;
        }
        for (a, b) in d_context.iter_mut().zip(&d_hidden[c.embed_dim..]) {
            *a += b;
        }

        let mut d_query = vec![0.0; hd];
        for (j, head) in mha.heads.iter().enumerate() {
            let cols = mha.head_cols(j, c.encoder_width);
            head.backward(
                &cache.attention[j],
                &cache.query,
                &enc.states,
                cols.clone(),
                &d_context[cols],
                &mut grads.attention.heads[j],
                &mut d_query,
                &mut d_states,
                &mut d_projected[j],
            );
        }
        let top = c.decoder_layers - 1;
        for (a, b) in carry[top].hidden.iter_mut().zip(&d_query) {
            *a += b;
        }
    }

    for (j, head) in mha.heads.iter().enumerate() {
        let cols = mha.head_cols(j, c.encoder_width);
        head.backward_projection(
            &enc.states,
            cols,
            &d_projected[j],
            &mut grads.attention.heads[j],
            &mut d_states,
        );
    }

    let mut carry: Vec<LstmState> = vec![LstmState::zeros(c.encoder_width); c.encoder_layers];
    for t in (0..enc.len()).rev() {
        let mut d_hidden = d_states.row(t).to_vec();
        for l in (0..c.encoder_layers).rev() {
            let layer = &params.encoder[l];
            for (a, b) in d_hidden.iter_mut().zip(&carry[l].hidden) {
                *a += b;
            }
            let mut d_input = vec![0.0; layer.input_width()];
            carry[l] = layer.backward(&enc_caches[l][t], &d_hidden, &carry[l].cell, &mut grads.encoder[l], &mut d_input);
            d_hidden = d_input;
        }
    }
}

/// Per-step windows for block targets under `spec`.
pub fn block_windows(bt: &BlockTargets, spec: &WindowSpec, frames: usize) -> Vec<Range<usize>> {
    bt.block_of_each()
        .into_iter()
        .map(|b| spec.frames(b, frames))
        .collect()
}

/// Block-factorized likelihood: tokens of block `b` attend only inside
/// `spec`'s window for `b`.
pub fn nt_forward(
    params: &ModelParams,
    x: &FeatureSequence,
    bt: &BlockTargets,
    spec: &WindowSpec,
) -> Result<ForwardOutput> {
    nt_forward_backward(params, x, bt, spec, None)
}

pub fn nt_forward_backward(
    params: &ModelParams,
    x: &FeatureSequence,
    bt: &BlockTargets,
    spec: &WindowSpec,
    grads: Option<&mut ModelParams>,
) -> Result<ForwardOutput> {
    if bt.block_size != spec.block_size {
        return Err(Error::Config(format!(
            "targets built for block size {} but window uses {}",
            bt.block_size, spec.block_size
        )));
    }
    let blocks = x.len().div_ceil(spec.block_size);
    if bt.num_blocks() != blocks {
        return Err(Error::shape("target blocks", blocks, bt.num_blocks()));
    }
    let windows = block_windows(bt, spec, x.len());
    forward_tokens(params, x, &bt.flattened, &windows, grads)
}

/// Full-sequence likelihood of `y` (terminator included); every step sees
/// all frames. Epsilon may not appear in `y`.
pub fn las_forward(params: &ModelParams, x: &FeatureSequence, y: &[usize]) -> Result<ForwardOutput> {
    las_forward_backward(params, x, y, None)
}

pub fn las_forward_backward(
    params: &ModelParams,
    x: &FeatureSequence,
    y: &[usize],
    grads: Option<&mut ModelParams>,
) -> Result<ForwardOutput> {
    if let Some(pos) = y.iter().position(|&t| t == EPSILON) {
        return Err(Error::Config(format!(
            "epsilon at position {pos} of a full-sequence target"
        )));
    }
    let windows = vec![0..x.len(); y.len()];
    forward_tokens(params, x, y, &windows, grads)
}

/// Initializes a streaming model from a full-sequence one. The two share
/// one parameterization, so this is a validated copy.
pub fn transfer_from_las(las: &ModelParams) -> Result<ModelParams> {
    las.validate().map_err(|e| Error::Transfer(e.to_string()))?;
    if las.config.vocab <= EPSILON {
        return Err(Error::Transfer("output projection has no epsilon row".into()));
    }
    Ok(las.clone())
}
