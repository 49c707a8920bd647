//! Shared listener/attender/speller architecture for the full-sequence (LAS)
//! and streaming neural transducer (NT) models.

mod checkpoint;
mod network;
mod params;
mod window;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use network::{
    block_windows, decoder_step, encode_utterance, forward_tokens, las_forward,
    las_forward_backward, nt_forward, nt_forward_backward, transfer_from_las, DecoderState,
    EncodedUtterance, ForwardOutput, StepOutput, StreamingEncoder,
};
pub use params::{ModelConfig, ModelMode, ModelParams};
pub use window::{attention_window, latency_ms, WindowSpec};
