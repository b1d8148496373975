//! Multiplicative concept bottleneck (MCB) laboratory.
//!
//! Trains MCB and an additive concept bottleneck baseline on synthetic
//! clinical-style corpora and evaluates them with multi-label metrics,
//! paired bootstrap tests and concept-faithfulness measures.
//!
//! Module map:
//! - [`corpus`]: notes, tokenisation, the synthetic generator, splits and the corpus file format
//! - [`negex`]: negation-aware concept pseudo-labels
//! - [`numcore`]: arrays, reverse-mode tape, losses, AdamW
//! - [`model`]: MCB / VCBM forward passes, joint loss, training, checkpoints
//! - [`evalstat`]: metrics, long-tail bins, bootstrap and sign tests, prediction dumps
//! - [`interpret`]: TopC maps, CSTPR, CIM (closed-form Jacobians), CCR, mask interventions

pub mod corpus;
pub mod error;
pub mod evalstat;
pub mod interpret;
pub mod model;
pub mod negex;
pub mod numcore;

pub use error::{Error, Result};
