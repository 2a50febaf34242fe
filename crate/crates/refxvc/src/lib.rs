//! Reference-based cross-lingual voice conversion.
//!
//! The pipeline: a content encoder turns discrete per-frame tokens into
//! hidden content vectors; a timbre encoder turns reference mels into global
//! (utterance-level) and local (frame-level) speaker embeddings; a
//! pronunciation-matching cross-attention retrieves, for every source frame,
//! the reference timbre of similarly pronounced frames; and a stride-4
//! WaveNet-style decoder reconstructs the mel spectrogram from content,
//! matched timbre, and the source's normalized pitch contour. Training is
//! MAE + multi-window adversarial + a speaker-similarity loss that ties the
//! global embeddings of multiple same-speaker references together.
//!
//! Crate layout mirrors the pipeline: [`features`] (mel/F0/tokens),
//! [`model`] (the four network blocks), [`training`] (losses, sampling,
//! schedule, train step, checkpoints), [`inference`] (end-to-end conversion
//! + Griffin-Lim vocoder), [`eval`] (embedding-space and F0 metrics), and
//! [`config`]/[`manifest`]/[`corpus`] for the runnable workflows.

pub mod audio;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod manifest;
pub mod model;
pub mod training;
pub mod vocoder;

pub use error::{Error, Result};
