//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operator applied during a forward pass;
//! [`Graph::backward`] then sweeps the records in reverse creation order.
//! Parameters live in a [`ParamStore`] and are bound into a graph once, so
//! a weight reused by several layers accumulates one joint gradient.

mod attention;
pub mod check;
mod conv;
mod graph;
mod norm;
mod param;
mod scalar;
mod tensor;

#[cfg(test)]
mod tests;

pub use attention::{ATTENTION_MASS_TOLERANCE, DEGENERATE_RANGE};
pub use graph::{Broadcast, CustomOp, Gradients, Graph, Var};
pub use norm::{running_moments, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use param::{Buffer, ParamId, ParamStore, Parameter, SharingGroup};
pub use scalar::Scalar;
pub use tensor::Tensor;
