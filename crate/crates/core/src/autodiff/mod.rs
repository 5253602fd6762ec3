//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s; calling
//! [`Tape::gradient`] on a scalar walks the record backwards and
//! accumulates vector-Jacobian products. Besides elementwise arithmetic and
//! matrix products the tape has blockwise rotation primitives (Rodrigues
//! map, logarithm, nearest-rotation projection, Euler decomposition),
//! linear blend skinning and capsule distances, so every loss in the
//! fitting and prior-training objectives is a single recorded graph.

mod geometry;
pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{CapsulePair, SkinData, Tape, Var};
pub use tensor::Tensor;
