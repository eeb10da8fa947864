//! Dense tensors and a tape-based reverse-mode differentiation engine with
//! exactly the op surface a small transformer needs.

mod attention;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use attention::{AttentionLayout, AttentionSegment};
pub use gradcheck::{grad_check, grad_check_at};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
