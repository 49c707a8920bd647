pub mod decoder;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod lm;
pub mod models;
pub mod numerics;
pub mod targets;
pub mod tokenizer;

pub use error::{Error, Result};
