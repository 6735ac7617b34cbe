//! Buffer-overrun detection as question answering.
//!
//! This crate generates small, straight-line C-style programs with known
//! buffer-overrun labels, verifies those labels with an independent
//! interpreter, and trains a multi-hop memory network on them from scratch:
//! a story (all lines before the buffer access) is stored in two memory
//! blocks, a query (the access line itself) attends over the address block
//! for several hops, and a logistic head scores the access safe or unsafe.
//!
//! Modules:
//! - [`corpus`]: program generation at difficulty levels 1-4 plus the
//!   execution oracle and corpus file I/O.
//! - [`encoding`]: tokenization, vocabulary, position-weighted line
//!   encodings, and padded index matrices.
//! - [`model`]: the forward pass (attention, readout, additive query
//!   update) and checkpointing.
//! - [`training`]: binary cross-entropy, exact hand-written gradients,
//!   Adam, and the training loop with top-k snapshot retention.
//! - [`metrics`]: accuracy / F1 / AUC and per-level evaluation reports.
//! - [`introspect`]: hop-wise attention traces and number-embedding
//!   geometry exports.

pub mod corpus;
pub mod encoding;
pub mod introspect;
pub mod metrics;
pub mod model;
pub mod training;

pub use corpus::{GenConfig, Label, Level, ProgramSample};
pub use encoding::{EncodedSample, Encoder, Vocabulary};
pub use model::{HopTrace, ModelParams};
pub use training::{TrainConfig, TrainOutput};
