//! A character-aware BiLSTM-CRF sequence tagger for part-of-speech tagging
//! and named entity recognition, built on a small reverse-mode autodiff
//! engine. No external numeric or ML dependencies.
//!
//! Layering, bottom to top:
//! - [`tensor`]: 2-D row-major tensors and the autodiff graph
//! - [`gradcheck`]: finite-difference gradient verification
//! - [`layers`]: embeddings, LSTM cells, BiLSTM encoders, dropout, linear
//! - [`crf`]: linear-chain CRF scoring, log-partition, Viterbi, oracles
//! - [`model`]: the full tagger (char BiLSTM + word BiLSTM + CRF)
//! - [`data`]: CoNLL I/O, vocabularies, embeddings, BIO validation, k-fold
//! - [`train`]: Adam, lr decay, early stopping, checkpoints
//! - [`eval`]: token accuracy and span-level micro P/R/F1
//! - [`cli`]: the `seqtag` command-line interface

pub mod cli;
pub mod crf;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
