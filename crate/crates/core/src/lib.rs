//! Voice timbre attribute detection.
//!
//! Given two utterances, predict for each of 34 timbre attributes (17
//! descriptors for each gender) how likely it is that the second utterance is
//! stronger than the first. The pipeline is:
//!
//! 1. [`audio`]: strip leading and trailing silence.
//! 2. [`features`]: frame-averaged embeddings from every layer of a frozen encoder.
//! 3. [`astp`]: multi-head attentive statistics pooling across layers.
//! 4. [`diffnet`]: comparison head over the concatenated pair embedding.
//! 5. [`train`] and [`eval`]: optimisation, checkpoints, accuracy and EER.

pub mod astp;
pub mod audio;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod model;
pub mod nn;
pub mod seed;
pub mod train;
pub mod tsv;

pub use error::{Error, Result};
