//! Description-conditioned prefix generation for a miniature encoder-decoder,
//! with a zero-shot dialogue-state-tracking harness around it.

pub mod analysis;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod pipeline;
pub mod prompter;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
