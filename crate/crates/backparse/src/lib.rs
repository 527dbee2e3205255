//! AMR-to-text generation with online back-parsing.
//!
//! The model pairs a relation-aware graph Transformer encoder with a
//! decoder that, at every generation step, also predicts the word's
//! source-graph node and its projected outgoing edges, feeding those
//! predictions back into the next decoding step.

pub mod amr;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
