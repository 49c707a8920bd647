use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntkit::frontend::{load_corpus, synth_corpus, write_corpus, Lexicon, SynthCorpusConfig};
use ntkit::harness::{
    decode_utterance, evaluate, load_model, prepare_examples, resolve_cap, resolve_inventory, run_train,
    ExperimentConfig, Lab, RecipeSettings, ToyGradCheck, RECIPES,
};
use ntkit::lm::train_ngram;
use ntkit::models::ModelMode;
use ntkit::tokenizer::{train_wordpieces, SubwordInventory, TokenizerMode, SOS};
use ntkit::{Error, Result};

#[derive(Parser)]
#[command(name = "ntkit", version, about = "Streaming neural transducer and LAS speech recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSON lines.
    SynthCorpus(SynthArgs),
    /// Build a grapheme or wordpiece inventory from a corpus.
    TrainWpm(WpmArgs),
    /// Train a Witten-Bell n-gram model over inventory units.
    TrainLm(LmArgs),
    /// Train a model; writes a checkpoint and metrics to `output_dir`.
    Train(TrainArgs),
    /// Decode `eval_corpus` and report WER.
    Eval(EvalArgs),
    /// Decode a corpus and write transcripts.
    Decode(DecodeArgs),
    /// Run an experiment sweep and print its report.
    Recipe(RecipeArgs),
    /// Check analytic gradients of toy models against finite differences.
    GradCheck(GradArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set block_size=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        apply_overrides(&mut cfg, &self.overrides)?;
        Ok(cfg)
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    utterances: usize,
    /// Lexicon size.
    #[arg(long, default_value_t = 30)]
    words: usize,
    /// Letters available to lexicon words.
    #[arg(long, default_value_t = 10)]
    alphabet: usize,
    #[arg(long, default_value_t = 7)]
    lexicon_seed: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    min_words: usize,
    #[arg(long, default_value_t = 4)]
    max_words: usize,
    #[arg(long, default_value = "utt")]
    prefix: String,
}

#[derive(Args)]
struct WpmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TokenizerMode::Wordpiece)]
    mode: TokenizerMode,
    /// Target inventory size for wordpieces.
    #[arg(long, default_value_t = 200)]
    size: usize,
}

#[derive(Args)]
struct LmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the per-block targets of the training corpus here and exit.
    #[arg(long)]
    dump_targets: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Per-utterance results as tab-separated id, reference, hypothesis.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to decode; defaults to `eval_corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Transcript file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving one attention CSV per utterance.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
}

#[derive(Args)]
struct RecipeArgs {
    /// Recipe name, or `all`.
    name: String,
    /// Directory for `<name>.csv` and `<name>.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    las_steps: Option<usize>,
    #[arg(long)]
    nt_steps: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    train_utterances: Option<usize>,
    /// Overrides of the shared model and optimizer settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct GradArgs {
    /// `las`, `nt`, or both when absent.
    #[arg(long)]
    mode: Option<ModelMode>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 12)]
    vocab: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Core(Error),
    /// Not attributable to the inputs.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CliResult = std::result::Result<(), Failure>;

fn synth(a: SynthArgs) -> CliResult {
    let lexicon = Lexicon::random(a.words, a.alphabet, a.lexicon_seed);
    let cfg = SynthCorpusConfig {
        utterances: a.utterances,
        min_words: a.min_words,
        max_words: a.max_words,
        noise_level: a.noise,
        seed: a.seed,
        id_prefix: a.prefix,
        ..SynthCorpusConfig::default()
    };
    let corpus = synth_corpus(&lexicon, &cfg)?;
    write_corpus(&a.out, &corpus)?;
    eprintln!("wrote {} utterances to {}", corpus.len(), a.out.display());
    Ok(())
}

fn train_wpm(a: WpmArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus)?;
    let texts = corpus.iter().map(|u| u.transcript.as_str());
    let inv = match a.mode {
        TokenizerMode::Grapheme => SubwordInventory::graphemes(texts),
        TokenizerMode::Wordpiece => {
            let t = train_wordpieces(texts, a.size)?;
            if let (Some(first), Some(last)) = (t.log_likelihoods.first(), t.log_likelihoods.last()) {
                eprintln!("{} merges, log-likelihood {first:.2} -> {last:.2}", t.merges.len());
            }
            t.inventory
        }
    };
    inv.save(&a.out)?;
    eprintln!("{} units ({}), hash {}", inv.len(), inv.mode(), inv.hash());
    Ok(())
}

fn train_lm(a: LmArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus)?;
    let inv = SubwordInventory::load(&a.inventory)?;
    let seqs: Vec<Vec<usize>> = corpus.iter().map(|u| inv.encode(&u.transcript)).collect();
    let lm = train_ngram(&seqs, a.order, inv.len(), SOS)?;
    lm.save(&a.out)?;
    eprintln!("order {} over {} units written to {}", lm.order(), lm.vocab(), a.out.display());
    Ok(())
}

fn dump_targets(cfg: &ExperimentConfig, out: &Path) -> CliResult {
    cfg.validate()?;
    cfg.check_paths()?;
    let path = cfg
        .train_corpus
        .as_ref()
        .ok_or_else(|| Error::Config("`train_corpus` is required".into()))?;
    let corpus = load_corpus(path)?;
    let inv = resolve_inventory(cfg, &corpus)?;
    let cap = resolve_cap(cfg, &inv, &corpus)?;
    let examples = prepare_examples(&corpus, &inv, ModelMode::Nt, cfg.block_size, cap)?;
    let mut text = String::new();
    for ex in &examples {
        if let Some(bt) = &ex.blocks {
            text.push_str(&bt.dump(&ex.id, &inv));
        }
    }
    fs::write(out, text)?;
    eprintln!("targets for {} utterances (cap {cap}) written to {}", examples.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = a.config.load()?;
    if let Some(out) = &a.dump_targets {
        return dump_targets(&cfg, out);
    }
    if cfg.output_dir.is_none() {
        eprintln!("note: `output_dir` is unset, nothing will be written");
    }
    let stdout = io::stdout();
    let art = run_train(&cfg, |m| {
        let _ = writeln!(stdout.lock(), "{}", m.to_json_line());
    })?;
    if let Some(wer) = art.metrics.last().and_then(|m| m.eval_wer) {
        eprintln!("final eval WER {:.2}%", wer * 100.0);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let cfg = a.config.load()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let path = cfg
        .eval_corpus
        .as_ref()
        .ok_or_else(|| Error::Config("`eval_corpus` is required".into()))?;
    let corpus = load_corpus(path)?;
    let report = evaluate(&model.params, &corpus, &model.inventory, &model.settings(&cfg)?)?;
    if let Some(out) = &a.out {
        let mut text = String::new();
        for u in &report.utterances {
            text.push_str(&format!("{}\t{}\t{}\n", u.id, u.reference, u.hypothesis));
        }
        fs::write(out, text)?;
    }
    let forced: usize = report.utterances.iter().map(|u| u.forced_terminators).sum();
    let e = &report.edits;
    println!(
        "WER {:.2}% ({} sub, {} del, {} ins over {} words, {} utterances)",
        report.wer * 100.0,
        e.substitutions,
        e.deletions,
        e.insertions,
        e.reference_words,
        report.utterances.len()
    );
    if forced > 0 {
        println!("forced terminators: {forced}");
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> CliResult {
    let cfg = a.config.load()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let path = a
        .corpus
        .as_ref()
        .or(cfg.eval_corpus.as_ref())
        .ok_or_else(|| Error::Config("pass --corpus or set `eval_corpus`".into()))?;
    let corpus = load_corpus(path)?;
    let settings = model.settings(&cfg)?;
    if let Some(dir) = &a.dump_attention {
        fs::create_dir_all(dir)?;
    }
    let mut lines = String::new();
    for u in &corpus {
        let (text, result) = decode_utterance(&model.params, &u.features, &model.inventory, &settings)?;
        lines.push_str(&format!("{} {}\n", u.id(), text));
        if let Some(dir) = &a.dump_attention {
            fs::write(dir.join(format!("{}.csv", u.id())), result.attention.to_csv())?;
        }
    }
    match &a.out {
        Some(p) => fs::write(p, lines)?,
        None => io::stdout().write_all(lines.as_bytes())?,
    }
    Ok(())
}

fn recipe(a: RecipeArgs) -> CliResult {
    let mut settings = RecipeSettings::default();
    apply_overrides(&mut settings.base, &a.overrides)?;
    if let Some(s) = a.seeds {
        settings.seeds = s;
    }
    if let Some(v) = a.las_steps {
        settings.las_steps = v;
    }
    if let Some(v) = a.nt_steps {
        settings.nt_steps = v;
    }
    if let Some(v) = a.finetune_steps {
        settings.finetune_steps = v;
    }
    if let Some(v) = a.finetune_lr {
        settings.finetune_learning_rate = v;
    }
    if let Some(v) = a.train_utterances {
        settings.train_utterances = v;
    }
    let names: Vec<&str> = match a.name.as_str() {
        "all" => RECIPES.to_vec(),
        n if RECIPES.contains(&n) => vec![n],
        other => {
            return Err(Error::Config(format!(
                "unknown recipe `{other}` (expected all or one of {})",
                RECIPES.join(", ")
            ))
            .into())
        }
    };
    let mut lab = Lab::new(settings)?;
    if !a.quiet {
        lab.set_log(|line| eprintln!("{line}"));
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    for name in names {
        let report = lab.run(name)?;
        print!("{}", report.summary());
        if let Some(dir) = &a.out {
            fs::write(dir.join(format!("{name}.csv")), report.to_csv())?;
            fs::write(dir.join(format!("{name}.txt")), report.summary())?;
        }
    }
    Ok(())
}

fn grad_check(a: GradArgs) -> CliResult {
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![ModelMode::Las, ModelMode::Nt],
    };
    let mut failed = Vec::new();
    for mode in modes {
        let toy = ToyGradCheck {
            layers: a.layers,
            width: a.width,
            vocab: a.vocab,
            heads: a.heads,
            samples: a.samples,
            seed: a.seed,
            ..ToyGradCheck::new(mode)
        };
        let r = toy.run()?;
        let worst = r.worst().map(|w| w.name.clone()).unwrap_or_default();
        println!(
            "{mode}: {} parameters, max relative error {:.3e} at {worst} ({})",
            r.entries.len(),
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAILED" }
        );
        if !r.passed() {
            failed.push(mode.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::SynthCorpus(a) => synth(a),
        Command::TrainWpm(a) => train_wpm(a),
        Command::TrainLm(a) => train_lm(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Decode(a) => decode(a),
        Command::Recipe(a) => recipe(a),
        Command::GradCheck(a) => grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
