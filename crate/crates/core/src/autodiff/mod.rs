//! Reverse-mode differentiation over dense 2-D `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a [`Node`];
//! [`Tape::backward`] then walks the record in reverse. Trainable tensors live
//! in a [`ParamStore`] outside the tape so a fresh tape can be built per batch.

mod params;
mod tape;
mod tensor;

pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, Axis, Node, Tape, Var};
pub use tensor::Tensor;
