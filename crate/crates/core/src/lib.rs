//! Target sound detection with mixed supervision.
//!
//! Two detection students share one architecture: `f_student` learns from
//! frame-level (strong) labels on a source domain and `w_student` learns from
//! clip-level (weak) labels on a target domain with disjoint classes. The
//! students teach each other through frame-level feature distillation and soft
//! pseudo labels, with an optional domain discriminator aligning the
//! intermediate features of both domains.
//!
//! Module map:
//! - [`features`]: WAV I/O, resampling and the 64-bin log-mel front end.
//! - [`dataset`]: toy sound catalog, scene synthesis, sample construction,
//!   label corruption and JSON-lines manifests.
//! - [`nn`]: the small set of layers (conv, GRU, linear) with explicit
//!   backward passes, plus the Adam optimizer.
//! - [`models`]: conditional (reference) network, detection students,
//!   discriminator, pooling head and checkpoints.
//! - [`losses`]: the detection, distillation, pseudo-label and domain losses.
//! - [`training`]: training phases, the two-student loop and the label noise
//!   experiment.
//! - [`evaluation`]: event decoding and segment/event based F-scores.
//! - [`experiment`]: the end-to-end toy benchmark.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod losses;
pub mod models;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
