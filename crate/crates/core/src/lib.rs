//! Ternary (2-bit) weight networks and a cycle model of a zero-skipping
//! matrix accelerator.
//!
//! The crate is `no_std` with `alloc`. It covers:
//!
//! * [`tensor`] / [`ternary`] / [`half`]: dense tensors, 2-bit packed ternary
//!   tensors, binary16 rounding and density statistics.
//! * [`quantize`]: threshold ternarization, thresholded ReLU, operand-pair
//!   density and the l1 activation penalty.
//! * [`graph`]: network description, im2col lowering and a forward pass that
//!   emits the matrix-multiply / pointwise operation trace.
//! * [`train`]: a small backpropagation engine with shadow-weight ternary
//!   training, plateau learning-rate drops and backward sparsity counters.
//! * [`sim`]: the PE-grid cycle model that skips zero-operand MACs.
//!
//! File formats and the command-line driver live in the `dlac` crate.

#![cfg_attr(not(test), no_std)]
// `!(x >= 0.0)` is how NaN gets rejected alongside negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod half;
pub mod quantize;
pub mod sim;
pub mod tensor;
pub mod ternary;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, DensityStats, Tensor};
pub use ternary::TernaryTensor;
