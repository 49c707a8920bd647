//! Dense numerics: matrices, LSTM cells, attention, losses, and Adam, all in
//! `f64` with hand-written backward passes.

mod adam;
mod attention;
mod gradcheck;
mod loss;
mod lstm;
mod tensor;

pub use adam::{adam_update, AdamState};
pub(crate) use attention::AttentionCache;
pub use attention::{
    additive_attention, multihead_attention, softmax, AdditiveAttention, AttentionContext,
    MultiHeadAttention, MultiHeadContext,
};
pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use loss::{log_softmax, softmax_xent};
pub(crate) use lstm::LstmCache;
pub use lstm::{lstm_step, LstmLayer, LstmState};
pub use tensor::{axpy, dot, sigmoid, Tensor2};
