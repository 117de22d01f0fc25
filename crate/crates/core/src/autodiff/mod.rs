//! Minimal reverse-mode automatic differentiation over dense tensors.

mod conv;
pub mod gradcheck;
mod optim;
mod params;
mod tape;

pub use optim::{AdamConfig, AdamState};
pub use params::{xavier_bound, Params};
pub use tape::{sigmoid, Gradients, Tape, Var};
