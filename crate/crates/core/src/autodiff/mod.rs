//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it runs. Calling
//! [`Graph::backward`] on a scalar node walks the record once in reverse and
//! returns a [`Gradients`] table. Graphs are cheap and meant to be rebuilt
//! for every forward pass; one graph is used from one thread only.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
