//! Dense `f64` tensors with a reverse-mode tape.

mod graph;
pub mod gradcheck;
pub(crate) mod kernels;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Activation, Gradients, Graph, Var, BCE_CLAMP};
pub use gradcheck::finite_difference_check;
pub use tensor::Tensor;
