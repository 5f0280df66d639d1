//! Minimal reverse-mode autodiff used by the registration and tracking
//! optimizers. Tensors are dense f64; graphs are per-evaluation tapes.

mod fd;
mod graph;
mod optim;
mod tensor;

pub use fd::{check_gradient, finite_difference, max_relative_error};
pub use graph::{concat_rows, stack_cols, Gradients, Graph, Var};
pub use optim::{Adam, GradAccum, ParamSet};
pub use tensor::Tensor;
