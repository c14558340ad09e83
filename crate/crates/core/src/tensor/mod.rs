//! Dense tensors, segment reductions, and a minimal reverse-mode autodiff
//! with Adam and cosine decay — the substrate every layer builds on.

mod dense;
pub mod gradcheck;
mod optim;
pub mod rng;
mod tape;

pub use dense::{DenseTensor, Scalar};
pub use optim::{cosine_decay_lr, AdamState, ParameterStore};
pub use tape::{Activation, Reduce, Tape, ValueId};
