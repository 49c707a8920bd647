//! Corpus-level decoding and scoring.

use serde::{Deserialize, Serialize};

use super::wer::{edit_counts, EditCounts};
use crate::decoder::{beam_search, las_beam_search, DecodeResult, Fusion, SearchOptions};
use crate::error::Result;
use crate::frontend::{FeatureSequence, Utterance};
use crate::models::{ModelMode, ModelParams, WindowSpec};
use crate::tokenizer::SubwordInventory;

#[derive(Debug, Clone, Copy)]
pub struct DecodeSettings<'a> {
    pub mode: ModelMode,
    pub spec: WindowSpec,
    pub beam: usize,
    /// Per-block label cap (streaming mode only).
    pub max_per_block: usize,
    pub fusion: Option<Fusion<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub edits: EditCounts,
    pub forced_terminators: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Total edits over total reference words.
    pub wer: f64,
    pub edits: EditCounts,
    pub utterances: Vec<UtteranceResult>,
}

/// Decodes one utterance and detokenizes the best hypothesis.
pub fn decode_utterance(
    params: &ModelParams,
    x: &FeatureSequence,
    inventory: &SubwordInventory,
    settings: &DecodeSettings<'_>,
) -> Result<(String, DecodeResult)> {
    let result = match settings.mode {
        ModelMode::Nt => {
            let mut opts = SearchOptions::new(settings.beam, settings.max_per_block, inventory.content_ids());
            opts.fusion = settings.fusion;
            beam_search(params, x, settings.spec, &opts)?
        }
        ModelMode::Las => {
            // Every unit spans at least one frame on this task.
            let mut opts = SearchOptions::new(settings.beam, x.len() + 2, inventory.content_ids());
            opts.fusion = settings.fusion;
            las_beam_search(params, x, &opts)?
        }
    };
    Ok((inventory.decode(&result.content()), result))
}

pub fn evaluate(
    params: &ModelParams,
    utterances: &[Utterance],
    inventory: &SubwordInventory,
    settings: &DecodeSettings<'_>,
) -> Result<EvalReport> {
    let mut total = EditCounts::default();
    let mut out = Vec::with_capacity(utterances.len());
    for u in utterances {
        let (hyp, result) = decode_utterance(params, &u.features, inventory, settings)?;
        let r: Vec<&str> = u.transcript.split_whitespace().collect();
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let edits = edit_counts(&r, &h);
        total.add(&edits);
        out.push(UtteranceResult {
            id: u.id().to_string(),
            reference: u.transcript.clone(),
            hypothesis: hyp,
            edits,
            forced_terminators: result.diagnostics.forced_terminators,
        });
    }
    Ok(EvalReport {
        wer: total.rate(),
        edits: total,
        utterances: out,
    })
}
