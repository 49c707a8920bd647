//! Experiment sweeps on the synthetic corpus: chunk/look-back/look-ahead
//! variants, pretraining from LAS, wordpieces, and shallow fusion.
//!
//! Every trained model is a cell keyed by its settings and seed. A [`Lab`]
//! memoizes cells so that sweeps sharing a model train it once. Reports
//! compare medians across seeds and never absolute error rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, DecodeSettings};
use super::train::{observed_block_max, prepare_examples, train_model, TrainOptions};
use crate::decoder::Fusion;
use crate::error::{Error, Result};
use crate::frontend::{synth_corpus, Lexicon, SynthCorpusConfig, Utterance};
use crate::lm::{train_ngram, FusionWeights, NGramLM};
use crate::models::{transfer_from_las, ModelMode, ModelParams, WindowSpec};
use crate::targets::default_cap;
use crate::tokenizer::{train_wordpieces, SubwordInventory, TokenizerMode, SOS};

pub const RECIPES: &[&str] = &["table1", "table2", "table4", "fusion"];

/// Margin below which two medians count as tied, in WER points.
pub const TIE_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeSettings {
    pub lexicon_words: usize,
    pub alphabet: usize,
    pub lexicon_seed: u64,
    pub train_utterances: usize,
    pub eval_utterances: usize,
    pub dev_utterances: usize,
    pub noise_level: f64,
    pub corpus_seed: u64,
    /// Model shape, optimizer and decoding settings shared by every cell.
    pub base: ExperimentConfig,
    pub las_steps: usize,
    /// Budget of streaming models trained from scratch in the attention-span
    /// sweep. The pretraining comparison gives its scratch model
    /// `las_steps + finetune_steps` instead.
    pub nt_steps: usize,
    /// Streaming budget after LAS initialization.
    pub finetune_steps: usize,
    pub finetune_learning_rate: f64,
    pub seeds: Vec<u64>,
    pub wordpiece_size: usize,
    /// Attention heads of the wordpiece comparison.
    pub wordpiece_heads: usize,
    pub lm_order: usize,
    /// Candidate LM weights tuned on the dev split.
    pub lm_weights: Vec<f64>,
}

impl Default for RecipeSettings {
    fn default() -> Self {
        Self {
            lexicon_words: 30,
            alphabet: 10,
            lexicon_seed: 7,
            train_utterances: 500,
            eval_utterances: 100,
            dev_utterances: 100,
            noise_level: 0.1,
            corpus_seed: 42,
            base: ExperimentConfig {
                learning_rate: 0.01,
                eval_every: 250,
                ..ExperimentConfig::default()
            },
            las_steps: 2000,
            nt_steps: 4000,
            finetune_steps: 2000,
            finetune_learning_rate: 0.02,
            seeds: vec![1, 2, 3],
            wordpiece_size: 48,
            wordpiece_heads: 4,
            lm_order: 3,
            lm_weights: vec![0.0, 0.1, 0.2, 0.3, 0.5],
        }
    }
}

impl RecipeSettings {
    pub fn hash(&self) -> String {
        let text = format!("{self:?}");
        hex16(&Sha256::digest(text.as_bytes()))
    }
}

fn hex16(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Digest of utterance ids, transcripts, frames (bit patterns) and alignments.
pub fn corpus_hash(utterances: &[Utterance]) -> String {
    let mut h = Sha256::new();
    for u in utterances {
        h.update(u.id().as_bytes());
        h.update([0]);
        h.update(u.transcript.as_bytes());
        h.update([0]);
        for v in u.features.frames.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        for e in &u.alignment.entries {
            h.update((e.start_frame as u64).to_le_bytes());
            h.update((e.end_frame as u64).to_le_bytes());
        }
    }
    hex16(&h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Init {
    Scratch,
    FromLas,
}

/// Settings that identify one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub tokenizer: TokenizerMode,
    pub mode: ModelMode,
    pub block_size: usize,
    pub lookback: usize,
    pub lookahead: usize,
    pub heads: usize,
    pub init: Init,
    pub steps: usize,
    pub seed: u64,
}

impl CellKey {
    pub fn las(tokenizer: TokenizerMode, heads: usize, steps: usize, seed: u64) -> Self {
        Self {
            tokenizer,
            mode: ModelMode::Las,
            block_size: 1,
            lookback: 0,
            lookahead: 0,
            heads,
            init: Init::Scratch,
            steps,
            seed,
        }
    }

    pub fn window(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.block_size, self.lookback, self.lookahead)
    }

    pub fn label(&self) -> String {
        match self.mode {
            ModelMode::Las => format!("LAS {} h{}", self.tokenizer, self.heads),
            ModelMode::Nt => format!(
                "NT {} W{} k{} la{} h{} {:?}",
                self.tokenizer, self.block_size, self.lookback, self.lookahead, self.heads, self.init
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    /// Eval-split WER in points (percent).
    pub wer: f64,
    pub dev_loss: Option<f64>,
    pub best_step: usize,
    pub params: ModelParams,
}

/// Shared corpora and inventories.
#[derive(Debug, Clone)]
pub struct LabData {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub eval: Vec<Utterance>,
    pub graphemes: SubwordInventory,
    pub wordpieces: SubwordInventory,
    pub corpus_hash: String,
}

impl LabData {
    pub fn generate(s: &RecipeSettings) -> Result<Self> {
        let lex = Lexicon::random(s.lexicon_words, s.alphabet, s.lexicon_seed);
        let split = |n: usize, seed: u64, prefix: &str| {
            synth_corpus(
                &lex,
                &SynthCorpusConfig {
                    utterances: n,
                    noise_level: s.noise_level,
                    seed,
                    id_prefix: prefix.into(),
                    ..SynthCorpusConfig::default()
                },
            )
        };
        let train = split(s.train_utterances, s.corpus_seed, "train")?;
        let dev = split(s.dev_utterances, s.corpus_seed + 1, "dev")?;
        let eval = split(s.eval_utterances, s.corpus_seed + 2, "eval")?;
        let texts = || train.iter().map(|u| u.transcript.as_str());
        let graphemes = SubwordInventory::graphemes(texts());
        let wordpieces = train_wordpieces(texts(), s.wordpiece_size)?.inventory;
        let mut all = train.clone();
        all.extend(dev.iter().cloned());
        all.extend(eval.iter().cloned());
        let corpus_hash = corpus_hash(&all);
        Ok(Self {
            train,
            dev,
            eval,
            graphemes,
            wordpieces,
            corpus_hash,
        })
    }

    pub fn inventory(&self, t: TokenizerMode) -> &SubwordInventory {
        match t {
            TokenizerMode::Grapheme => &self.graphemes,
            TokenizerMode::Wordpiece => &self.wordpieces,
        }
    }
}

/// Memoizing experiment runner.
pub struct Lab {
    pub settings: RecipeSettings,
    pub data: LabData,
    cells: BTreeMap<CellKey, CellResult>,
    lms: BTreeMap<TokenizerMode, NGramLM>,
    log: Box<dyn FnMut(&str) + Send>,
}

impl Lab {
    pub fn new(settings: RecipeSettings) -> Result<Self> {
        settings.base.validate()?;
        if settings.seeds.is_empty() {
            return Err(Error::Config("recipes need at least one seed".into()));
        }
        let data = LabData::generate(&settings)?;
        Ok(Self {
            settings,
            data,
            cells: BTreeMap::new(),
            lms: BTreeMap::new(),
            log: Box::new(|_| {}),
        })
    }

    /// Receives one line per trained cell.
    pub fn set_log(&mut self, log: impl FnMut(&str) + Send + 'static) {
        self.log = Box::new(log);
    }

    pub fn trained_cells(&self) -> usize {
        self.cells.len()
    }

    fn cap(&self, t: TokenizerMode, block: usize) -> Result<usize> {
        Ok(default_cap(observed_block_max(&self.data.train, self.data.inventory(t), block)?))
    }

    fn decode_settings<'a>(&self, key: &CellKey, fusion: Option<Fusion<'a>>) -> Result<DecodeSettings<'a>> {
        Ok(DecodeSettings {
            mode: key.mode,
            spec: key.window()?,
            beam: self.settings.base.beam,
            max_per_block: self.cap(key.tokenizer, key.block_size)?,
            fusion,
        })
    }

    /// Trains `key` (and its LAS initializer) unless already cached.
    pub fn cell(&mut self, key: CellKey) -> Result<&CellResult> {
        if !self.cells.contains_key(&key) {
            let result = self.train_cell(key)?;
            (self.log)(&format!(
                "trained {} seed {} steps {}: wer {:.2} (best step {})",
                key.label(),
                key.seed,
                key.steps,
                result.wer,
                result.best_step
            ));
            self.cells.insert(key, result);
        }
        Ok(&self.cells[&key])
    }

    fn train_cell(&mut self, key: CellKey) -> Result<CellResult> {
        let base = self.settings.base.clone();
        let inv = self.data.inventory(key.tokenizer).clone();
        let mode = key.mode;
        let spec = key.window()?;
        let init = match key.init {
            Init::Scratch => {
                let mut cfg = base.clone();
                cfg.heads = key.heads;
                ModelParams::init(cfg.model_config(self.data.train[0].features.dim(), inv.len()), key.seed)?
            }
            Init::FromLas => {
                let las = CellKey::las(key.tokenizer, key.heads, self.settings.las_steps, key.seed);
                transfer_from_las(&self.cell(las)?.params)?
            }
        };
        let cap = self.cap(key.tokenizer, key.block_size)?;
        let train = prepare_examples(&self.data.train, &inv, mode, key.block_size, cap)?;
        let dev = prepare_examples(&self.data.dev, &inv, mode, key.block_size, cap)?;
        let opts = TrainOptions {
            steps: key.steps,
            batch_size: base.batch_size,
            learning_rate: match key.init {
                Init::Scratch => base.learning_rate,
                Init::FromLas => self.settings.finetune_learning_rate,
            },
            clip_norm: base.clip_norm,
            eval_every: base.eval_every,
            seed: key.seed.wrapping_mul(1_000_003).wrapping_add(key.init as u64),
            spec,
        };
        let out = train_model(init, &train, &dev, &opts, |_| {})?;
        let report = evaluate(&out.best, &self.data.eval, &inv, &self.decode_settings(&key, None)?)?;
        Ok(CellResult {
            key,
            wer: 100.0 * report.wer,
            dev_loss: out.best_eval_loss,
            best_step: out.best_step,
            params: out.best,
        })
    }

    /// n-gram LM over the training transcripts.
    pub fn lm(&mut self, t: TokenizerMode) -> Result<&NGramLM> {
        if !self.lms.contains_key(&t) {
            let inv = self.data.inventory(t);
            let seqs: Vec<Vec<usize>> = self.data.train.iter().map(|u| inv.encode(&u.transcript)).collect();
            let lm = train_ngram(&seqs, self.settings.lm_order, inv.len(), SOS)?;
            self.lms.insert(t, lm);
        }
        Ok(&self.lms[&t])
    }

    /// WERs (points) of every seed for the key pattern `f(seed)`.
    pub fn seed_wers(&mut self, f: impl Fn(u64) -> CellKey) -> Result<Vec<f64>> {
        let seeds = self.settings.seeds.clone();
        seeds.into_iter().map(|s| Ok(self.cell(f(s))?.wer)).collect()
    }

    pub fn run(&mut self, name: &str) -> Result<RecipeReport> {
        match name {
            "table1" => self.table1(),
            "table2" => self.table2(),
            "table4" => self.table4(),
            "fusion" => self.fusion(),
            other => Err(Error::Config(format!(
                "unknown recipe `{other}` (expected one of {})",
                RECIPES.join(", ")
            ))),
        }
    }

    fn report(&self, name: &str) -> RecipeReport {
        RecipeReport {
            name: name.to_string(),
            config_hash: self.settings.hash(),
            corpus_hash: self.data.corpus_hash.clone(),
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    /// Attention span: within the chunk, looking back, and looking ahead.
    pub fn table1(&mut self) -> Result<RecipeReport> {
        let st = self.settings.clone();
        let g = TokenizerMode::Grapheme;
        let las_steps = self.settings.las_steps;
        let mut rep = self.report("table1");
        let within = self.seed_wers(|s| nt_key(&st, g, 10, 1, 0, 1, Init::Scratch, s))?;
        let back = self.seed_wers(|s| nt_key(&st, g, 10, 20, 0, 1, Init::Scratch, s))?;
        let ahead = self.seed_wers(|s| nt_key(&st, g, 10, 20, 5, 1, Init::Scratch, s))?;
        let las = self.seed_wers(|s| CellKey::las(g, 1, las_steps, s))?;
        rep.row("NT, attention within chunk", "10", &within);
        rep.row("NT, look back", "10", &back);
        rep.row("+ look ahead", "10", &ahead);
        rep.row("LAS", "-", &las);
        let (w, b, a, l) = (median(&within), median(&back), median(&ahead), median(&las));
        rep.checks.push(Check::at_least("within chunk >= look back", w, b));
        rep.checks.push(Check::at_least("look back >= look back + look ahead", b, a));
        for (name, v) in [("within chunk", w), ("look back", b), ("look back + look ahead", a)] {
            rep.checks.push(Check::at_least(&format!("{name} >= LAS"), v, l));
        }
        Ok(rep)
    }

    /// Initialization from LAS versus training from scratch.
    pub fn table2(&mut self) -> Result<RecipeReport> {
        let st = self.settings.clone();
        let g = TokenizerMode::Grapheme;
        let las_steps = self.settings.las_steps;
        let mut rep = self.report("table2");
        // Same total number of updates as LAS pretraining plus fine-tuning.
        let scratch_steps = st.las_steps + st.finetune_steps;
        let scratch5 = self.seed_wers(|s| CellKey {
            steps: scratch_steps,
            ..nt_key(&st, g, 5, 20, 5, 1, Init::Scratch, s)
        })?;
        let pre5 = self.seed_wers(|s| nt_key(&st, g, 5, 20, 5, 1, Init::FromLas, s))?;
        let pre10 = self.seed_wers(|s| nt_key(&st, g, 10, 20, 5, 1, Init::FromLas, s))?;
        let las = self.seed_wers(|s| CellKey::las(g, 1, las_steps, s))?;
        rep.row("NT from scratch", "5", &scratch5);
        rep.row("NT pretrained from LAS", "5", &pre5);
        rep.row("NT pretrained from LAS", "10", &pre10);
        rep.row("LAS", "-", &las);
        rep.checks.push(Check::margin(
            "scratch (W=5) - pretrained (W=5) >= 0.5",
            median(&scratch5) - median(&pre5),
            TIE_MARGIN,
        ));
        rep.checks.push(Check::within(
            "pretrained (W=10) within 1.0 of LAS",
            median(&pre10) - median(&las),
            1.0,
        ));
        Ok(rep)
    }

    /// Wordpieces versus graphemes, multi-head attention, chunk 5.
    pub fn table4(&mut self) -> Result<RecipeReport> {
        let st = self.settings.clone();
        let h = self.settings.wordpiece_heads;
        let las_steps = self.settings.las_steps;
        let mut rep = self.report("table4");
        let mut gaps = Vec::new();
        for t in [TokenizerMode::Grapheme, TokenizerMode::Wordpiece] {
            let nt = self.seed_wers(|s| nt_key(&st, t, 5, 20, 5, h, Init::FromLas, s))?;
            let las = self.seed_wers(|s| CellKey::las(t, h, las_steps, s))?;
            let name = match t {
                TokenizerMode::Grapheme => "grapheme",
                TokenizerMode::Wordpiece => "wordpiece",
            };
            rep.row(&format!("NT, MHA, {name}"), "5", &nt);
            rep.row(&format!("LAS, MHA, {name}"), "-", &las);
            gaps.push(median(&nt) - median(&las));
        }
        rep.checks.push(Check::at_least(
            "grapheme NT-LAS gap >= wordpiece NT-LAS gap",
            gaps[0],
            gaps[1],
        ));
        Ok(rep)
    }

    /// Shallow fusion with an n-gram LM, weight tuned on the dev split.
    pub fn fusion(&mut self) -> Result<RecipeReport> {
        let st = self.settings.clone();
        let g = TokenizerMode::Grapheme;
        let mut rep = self.report("fusion");
        let keys: Vec<CellKey> = self
            .settings
            .seeds
            .clone()
            .into_iter()
            .map(|s| nt_key(&st, g, 5, 20, 5, 1, Init::FromLas, s))
            .collect();
        for &k in &keys {
            self.cell(k)?;
        }
        self.lm(g)?;
        let lm = &self.lms[&g];
        let inv = &self.data.graphemes;
        let beta = self.settings.base.coverage_threshold;
        let mut no_lm = Vec::new();
        let mut tuned = Vec::new();
        let mut chosen = Vec::new();
        let mut identical = true;
        for k in &keys {
            let params = &self.cells[k].params;
            let off = self.decode_settings(k, None)?;
            let fused = |lambda: f64| -> Result<DecodeSettings<'_>> {
                let mut s = off;
                s.fusion = Some(Fusion {
                    lm: Some(lm),
                    weights: FusionWeights { lambda, eta: 0.0, beta },
                });
                Ok(s)
            };
            let mut best = (f64::INFINITY, 0.0);
            for &lambda in &self.settings.lm_weights {
                let dev = evaluate(params, &self.data.dev, inv, &fused(lambda)?)?.wer;
                if dev < best.0 {
                    best = (dev, lambda);
                }
            }
            let base = evaluate(params, &self.data.eval, inv, &off)?;
            let zero = evaluate(params, &self.data.eval, inv, &fused(0.0)?)?;
            identical &= base == zero;
            no_lm.push(100.0 * base.wer);
            tuned.push(100.0 * evaluate(params, &self.data.eval, inv, &fused(best.1)?)?.wer);
            chosen.push(best.1);
        }
        rep.row("NT, no LM", "5", &no_lm);
        rep.row("NT, with LM (tuned weight)", "5", &tuned);
        rep.row("chosen LM weight", "5", &chosen);
        rep.checks.push(Check::within(
            "with LM - without LM <= 0.2",
            median(&tuned) - median(&no_lm),
            0.2,
        ));
        rep.checks.push(Check {
            description: "zero-weight fusion identical to no fusion".into(),
            passed: identical,
            detail: format!("{identical}"),
        });
        Ok(rep)
    }
}

fn nt_key(st: &RecipeSettings, t: TokenizerMode, w: usize, k: usize, la: usize, heads: usize, init: Init, seed: u64) -> CellKey {
    CellKey {
        tokenizer: t,
        mode: ModelMode::Nt,
        block_size: w,
        lookback: k,
        lookahead: la,
        heads,
        init,
        steps: match init {
            Init::Scratch => st.nt_steps,
            Init::FromLas => st.finetune_steps,
        },
        seed,
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// `a >= b`, where differences under [`TIE_MARGIN`] count as a tie.
    pub fn at_least(description: &str, a: f64, b: f64) -> Self {
        let diff = a - b;
        let (passed, verdict) = if diff.abs() < TIE_MARGIN {
            (true, "tie")
        } else if diff > 0.0 {
            (true, "ordered")
        } else {
            (false, "reversed")
        };
        Self {
            description: description.into(),
            passed,
            detail: format!("{a:.2} vs {b:.2} ({verdict}, diff {diff:+.2})"),
        }
    }

    /// `value >= margin`.
    pub fn margin(description: &str, value: f64, margin: f64) -> Self {
        Self {
            description: description.into(),
            passed: value >= margin,
            detail: format!("{value:+.2} (need >= {margin})"),
        }
    }

    /// `value <= limit`.
    pub fn within(description: &str, value: f64, limit: f64) -> Self {
        Self {
            description: description.into(),
            passed: value <= limit,
            detail: format!("{value:+.2} (need <= {limit})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub chunk: String,
    pub per_seed: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeReport {
    pub name: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub rows: Vec<ReportRow>,
    pub checks: Vec<Check>,
}

impl RecipeReport {
    fn row(&mut self, system: &str, chunk: &str, per_seed: &[f64]) {
        self.rows.push(ReportRow {
            system: system.into(),
            chunk: chunk.into(),
            per_seed: per_seed.to_vec(),
            median: median(per_seed),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let seeds = self.rows.first().map_or(0, |r| r.per_seed.len());
        let mut s = String::from("system,chunk");
        for i in 0..seeds {
            let _ = write!(s, ",seed{}", i + 1);
        }
        s.push_str(",median\n");
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.system, r.chunk);
            for v in &r.per_seed {
                let _ = write!(s, ",{v:.4}");
            }
            let _ = writeln!(s, ",{:.4}", r.median);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "recipe {}", self.name);
        let _ = writeln!(s, "config hash {}", self.config_hash);
        let _ = writeln!(s, "corpus hash {}", self.corpus_hash);
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.2}")).collect();
            let _ = writeln!(s, "{:<32} {:>5} median {:>6.2}  [{}]", r.system, r.chunk, r.median, seeds.join(" "));
        }
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.description, c.detail);
        }
        s
    }
}
