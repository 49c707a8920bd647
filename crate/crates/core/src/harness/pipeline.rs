//! File-driven training and evaluation built from an [`ExperimentConfig`].

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, DecodeSettings, EvalReport};
use super::train::{observed_block_max, prepare_examples, train_model, MetricsRecord, TrainOptions};
use crate::decoder::Fusion;
use crate::error::{Error, Result};
use crate::frontend::{load_corpus, Utterance};
use crate::lm::{train_ngram, NGramLM};
use crate::models::{transfer_from_las, Checkpoint, ModelMode, ModelParams};
use crate::targets::default_cap;
use crate::tokenizer::{train_wordpieces, SubwordInventory, TokenizerMode, SOS};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const INVENTORY_FILE: &str = "inventory.txt";
pub const CONFIG_FILE: &str = "config.txt";

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required")))
}

/// Loads `inventory` when set, otherwise builds one from `train`.
pub fn resolve_inventory(cfg: &ExperimentConfig, train: &[Utterance]) -> Result<SubwordInventory> {
    if let Some(p) = &cfg.inventory {
        let inv = SubwordInventory::load(p)?;
        if inv.mode() != cfg.tokenizer {
            return Err(Error::Config(format!(
                "inventory {} is {} but tokenizer = {}",
                p.display(),
                inv.mode(),
                cfg.tokenizer
            )));
        }
        return Ok(inv);
    }
    if train.is_empty() {
        return Err(Error::Config("either `inventory` or `train_corpus` is required".into()));
    }
    let texts = train.iter().map(|u| u.transcript.as_str());
    match cfg.tokenizer {
        TokenizerMode::Grapheme => Ok(SubwordInventory::graphemes(texts)),
        TokenizerMode::Wordpiece => Ok(train_wordpieces(texts, cfg.wordpiece_size)?.inventory),
    }
}

/// The configured per-block cap, or two above the busiest training block.
/// Without training data the cap falls back to `block_size + 2`.
pub fn resolve_cap(cfg: &ExperimentConfig, inventory: &SubwordInventory, train: &[Utterance]) -> Result<usize> {
    if cfg.max_per_block > 0 {
        return Ok(cfg.max_per_block);
    }
    if train.is_empty() {
        return Ok(cfg.block_size + 2);
    }
    Ok(default_cap(observed_block_max(train, inventory, cfg.block_size)?))
}

/// Loads `lm` when set, otherwise trains one of `lm_order` on `train`.
pub fn resolve_lm(cfg: &ExperimentConfig, inventory: &SubwordInventory, train: &[Utterance]) -> Result<Option<NGramLM>> {
    if let Some(p) = &cfg.lm {
        let lm = NGramLM::load(p)?;
        if lm.vocab() != inventory.len() {
            return Err(Error::LanguageModel(format!(
                "model covers {} units but the inventory has {}",
                lm.vocab(),
                inventory.len()
            )));
        }
        return Ok(Some(lm));
    }
    if cfg.lm_order == 0 || train.is_empty() {
        return Ok(None);
    }
    let seqs: Vec<Vec<usize>> = train.iter().map(|u| inventory.encode(&u.transcript)).collect();
    Ok(Some(train_ngram(&seqs, cfg.lm_order, inventory.len(), SOS)?))
}

pub fn decode_settings<'a>(cfg: &ExperimentConfig, cap: usize, lm: Option<&'a NGramLM>) -> Result<DecodeSettings<'a>> {
    let weights = cfg.fusion_weights();
    let fusion = (lm.is_some() || weights.eta > 0.0).then_some(Fusion { lm, weights });
    Ok(DecodeSettings {
        mode: cfg.mode,
        spec: cfg.window()?,
        beam: cfg.beam,
        max_per_block: cap,
        fusion,
    })
}

fn load_optional(p: &Option<std::path::PathBuf>) -> Result<Vec<Utterance>> {
    p.as_ref().map_or(Ok(Vec::new()), load_corpus)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    /// Best checkpoint by eval loss.
    pub checkpoint: Checkpoint,
    pub inventory: SubwordInventory,
    pub metrics: Vec<MetricsRecord>,
    pub cap: usize,
}

/// Validates everything, then trains. Incompatible inventories, shapes or
/// checkpoints are reported before the first update.
pub fn run_train(cfg: &ExperimentConfig, mut on_record: impl FnMut(&MetricsRecord)) -> Result<TrainArtifacts> {
    cfg.validate()?;
    cfg.check_paths()?;
    let train = load_corpus(required(&cfg.train_corpus, "train_corpus")?)?;
    let eval = load_optional(&cfg.eval_corpus)?;
    let inventory = resolve_inventory(cfg, &train)?;
    let cap = resolve_cap(cfg, &inventory, &train)?;
    let feature_dim = train[0].features.dim();
    let model_cfg = cfg.model_config(feature_dim, inventory.len());
    model_cfg.validate()?;

    let init = match &cfg.init_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p, Some(&inventory.hash()))?;
            if ck.params.config != model_cfg {
                return Err(Error::Checkpoint(format!(
                    "checkpoint shape `{}` differs from configured `{}`",
                    ck.params.config.to_header(),
                    model_cfg.to_header()
                )));
            }
            match (ck.mode, cfg.mode) {
                (ModelMode::Las, ModelMode::Nt) => transfer_from_las(&ck.params)?,
                _ => ck.params,
            }
        }
        None => ModelParams::init(model_cfg, cfg.seed)?,
    };
    let spec = cfg.window()?;
    let train_ex = prepare_examples(&train, &inventory, cfg.mode, cfg.block_size, cap)?;
    let eval_ex = prepare_examples(&eval, &inventory, cfg.mode, cfg.block_size, cap)?;

    let opts = TrainOptions {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        clip_norm: cfg.clip_norm,
        eval_every: cfg.eval_every,
        seed: cfg.seed,
        spec,
    };
    let outcome = train_model(init, &train_ex, &eval_ex, &opts, &mut on_record)?;
    let mut metrics = outcome.metrics;
    if !eval.is_empty() {
        let lm = resolve_lm(cfg, &inventory, &train)?;
        let settings = decode_settings(cfg, cap, lm.as_ref())?;
        let report = evaluate(&outcome.best, &eval, &inventory, &settings)?;
        if let Some(last) = metrics.last_mut() {
            last.eval_wer = Some(report.wer);
        }
    }
    let checkpoint = Checkpoint {
        mode: cfg.mode,
        inventory_hash: inventory.hash(),
        params: outcome.best,
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        checkpoint.save(dir.join(CHECKPOINT_FILE))?;
        inventory.save(dir.join(INVENTORY_FILE))?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
        let mut f = fs::File::create(dir.join(METRICS_FILE))?;
        for m in &metrics {
            writeln!(f, "{}", m.to_json_line())?;
        }
    }
    Ok(TrainArtifacts {
        checkpoint,
        inventory,
        metrics,
        cap,
    })
}

/// A trained model ready for decoding.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub inventory: SubwordInventory,
    pub cap: usize,
    pub lm: Option<NGramLM>,
}

impl LoadedModel {
    pub fn settings(&self, cfg: &ExperimentConfig) -> Result<DecodeSettings<'_>> {
        decode_settings(cfg, self.cap, self.lm.as_ref())
    }
}

/// Loads a checkpoint together with its inventory. The inventory comes from
/// `inventory` or, failing that, from the file saved next to the checkpoint.
pub fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<LoadedModel> {
    cfg.validate()?;
    cfg.check_paths()?;
    let train = load_optional(&cfg.train_corpus)?;
    let inventory = match (&cfg.inventory, checkpoint.parent().map(|d| d.join(INVENTORY_FILE))) {
        (Some(_), _) => resolve_inventory(cfg, &train)?,
        (None, Some(p)) if p.exists() => SubwordInventory::load(p)?,
        _ => resolve_inventory(cfg, &train)?,
    };
    let ck = Checkpoint::load(checkpoint, Some(&inventory.hash()))?;
    if ck.mode != cfg.mode {
        return Err(Error::Config(format!(
            "checkpoint was trained as {} but mode = {}",
            ck.mode, cfg.mode
        )));
    }
    let cap = resolve_cap(cfg, &inventory, &train)?;
    let lm = resolve_lm(cfg, &inventory, &train)?;
    Ok(LoadedModel {
        params: ck.params,
        inventory,
        cap,
        lm,
    })
}

/// Decodes `eval_corpus` with a trained checkpoint and scores it.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let model = load_model(cfg, checkpoint)?;
    let eval = load_corpus(required(&cfg.eval_corpus, "eval_corpus")?)?;
    evaluate(&model.params, &eval, &model.inventory, &model.settings(cfg)?)
}
