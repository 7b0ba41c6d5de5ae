//! Retrieval-augmented financial sentiment classification.
//!
//! The pipeline turns labeled financial text into instruction-following
//! training records, tokenizes them with a byte-level BPE vocabulary,
//! fits a small windowed language model, and answers sentiment queries
//! with optional context retrieved from a local news corpus.
//!
//! The crate is organized around the data flow:
//!
//! * [`dataset`] formats raw labeled records into prompt/response pairs.
//! * [`bpe`] learns and applies the byte-pair vocabulary.
//! * [`lm`] holds the language model, its gradients, and the trainer.
//! * [`corpus`] stores news documents and an inverted token index.
//! * [`retrieval`] scores corpus documents against a query and builds
//!   context bundles.
//! * [`backend`] abstracts over completion providers (mock, local toy
//!   model, remote HTTP).
//! * [`eval`] maps completions back to labels and computes metrics.
//! * [`cli`] wires everything into the `finrag` binary.

pub mod backend;
pub mod bpe;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod lm;
pub mod retrieval;
pub mod text;

#[cfg(test)]
pub(crate) mod http_stub;
