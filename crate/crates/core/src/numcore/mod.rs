//! Dense-array numerics: arrays, a reverse-mode tape, losses and AdamW.

mod array;
pub mod check;
pub mod loss;
pub mod nn;
pub mod optim;
mod param;
mod tape;

pub use array::Array;
pub use loss::{bce_loss, cosine_align_loss, focal_loss};
pub use nn::{layer_norm, mha, mha_forward, MhaVars, MhaWeights};
pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use param::{ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}
