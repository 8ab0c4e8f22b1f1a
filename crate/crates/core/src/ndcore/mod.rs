//! Dense `f64` tensors and a small reverse-mode differentiation engine.

mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Bindings, Gradients, Graph, LeafKind, NodeId, Op, Session};
pub use ops::{Backend, Eager};
pub use tensor::Tensor;
