//! Language-driven medical image segmentation at desk scale.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`data`]: image/mask types, PNG ingestion, scan-level splitting and a
//!   synthetic shape corpus with exact ground truth.
//! - [`crd`]: color region description, which turns image/mask pairs into
//!   image-mask-description triplets.
//! - [`model`]: the vision encoder, the bidirectional vision/language
//!   projections, a small causal language model with a `[SEG]` token and the
//!   prompt-conditioned mask decoder.
//! - [`otfa`]: one-shot, training-free adaptation to unseen classes.
//! - [`training`]: losses, learning-rate schedule and the training loop.
//! - [`eval`]: Dice scoring, prompt simulators, paired t-tests and reports.

pub mod crd;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod otfa;
pub mod training;

pub use error::{Error, Result};
