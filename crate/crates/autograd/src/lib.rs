//! Reverse-mode automatic differentiation on a single-use tape.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! dense `f64` tensors (`ndarray::ArrayD`). Calling [`Graph::backward`] on a
//! scalar node walks the tape in reverse and returns gradients for every
//! leaf created with [`Graph::variable`].
//!
//! Besides the elementwise and matrix primitives in [`graph`], the [`nn`]
//! module provides fused layer operations (2-D convolution, batch
//! normalization, frequency max-pooling and a bidirectional LSTM) whose
//! backward passes are written by hand for speed.
//!
//! Custom fused operations can be added from outside the crate through
//! [`Graph::push_op`].

pub mod graph;
pub mod nn;

pub use graph::{sigmoid, tensor2, BackwardCtx, BackwardFn, Gradients, Graph, Tensor, Var};
pub use nn::{BatchNormMode, BatchStats, LstmWeights};
