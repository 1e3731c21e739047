//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod gradcheck;
mod graph;

pub use gradcheck::{central_difference, gradcheck, max_relative_error, REL_ERR_FLOOR};
pub use graph::{
    ElementwiseOp, Gradients, Graph, ReduceOp, Var, LEAKY_RELU_SLOPE, SIGMA_FLOOR,
};
pub(crate) use graph::bilinear;
