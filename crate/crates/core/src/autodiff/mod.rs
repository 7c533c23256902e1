//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every op in construction order; [`Graph::backward`]
//! walks that order in reverse and accumulates gradients into trainable
//! leaves. The op set is deliberately small: matmul, bias add, stride-1
//! "same" conv2d, relu, sigmoid, log, clamp, elementwise add/mul, scalar
//! scale/shift, 2×2 average pooling, global average pooling, sum and the
//! gradient-reversal node.
//!
//! There is no broadcasting beyond scalar-with-tensor and the row bias of
//! [`Graph::bias_add`].

mod graph;
mod kernels;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;
