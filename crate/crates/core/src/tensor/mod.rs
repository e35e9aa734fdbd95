//! Dense and sparse double-precision matrices, a reverse-mode gradient tape
//! and the Adam optimizer used for training.

mod adam;
mod dense;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{accuracy, dropout_mask, masked_cross_entropy, DenseMatrix};
pub use sparse::{CsrMatrix, Propagator, DENSE_FALLBACK_MAX_NODES};
pub use tape::{Gradients, Tape, Var};
