//! Deterministic reverse-mode differentiation for small sequence models.
//!
//! Everything is generic over [`Scalar`] so that the same model code runs in
//! `f32` for training and in `f64` for finite-difference verification.

pub mod array;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;

pub use array::Array;
pub use error::{NnError, Result};
pub use optim::{adam_step, lr_schedule, OptimizerState};
pub use params::{Grads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
