//! Dense tensors, reverse-mode differentiation, optimizers and the
//! finite-difference gradient oracle used across the test suites.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, Selection};
pub use graph::{Graph, ParamId, ParamStore, Var};
pub use optim::{Optimizer, OptimizerConfig};
pub use tensor::Tensor;
