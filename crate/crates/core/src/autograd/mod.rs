//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation of one forward pass on a tape. Learned
//! parameters live outside the graph in a [`ParamSet`] and are borrowed for
//! the lifetime of the pass; [`Graph::backward`] then yields gradients for
//! inputs and parameters alike.

mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, separate_ties, GradCheckReport, FD_STEP};
pub use graph::{Graph, Var};
pub use params::{ParamId, ParamSet};
pub use tensor::{Real, Tensor};

pub use graph::XentStats;

#[cfg(test)]
mod tests;
