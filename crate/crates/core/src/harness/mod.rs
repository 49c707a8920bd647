//! Training, evaluation, configuration and the experiment recipes.

mod config;
mod evaluate;
mod gradcheck;
mod pipeline;
mod recipes;
mod train;
mod wer;

pub use config::{ExperimentConfig, KEYS as CONFIG_KEYS};
pub use evaluate::{decode_utterance, evaluate, DecodeSettings, EvalReport, UtteranceResult};
pub use gradcheck::ToyGradCheck;
pub use pipeline::{
    decode_settings, load_model, resolve_cap, resolve_inventory, resolve_lm, run_eval, run_train, LoadedModel,
    TrainArtifacts, CHECKPOINT_FILE, CONFIG_FILE, INVENTORY_FILE, METRICS_FILE,
};
pub use recipes::{
    corpus_hash, median, CellKey, CellResult, Check, Init, Lab, LabData, RecipeReport, RecipeSettings, ReportRow,
    RECIPES, TIE_MARGIN,
};
pub use train::{
    dataset_loss, example_loss, observed_block_max, prepare_examples, train_model, Example, MetricsRecord,
    TrainOptions, TrainOutcome,
};
pub use wer::{edit_counts, wer, EditCounts};
