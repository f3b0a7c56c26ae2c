//! Dense tensors, convolution kernels and reverse-mode differentiation.

mod array;
pub mod fault;
mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;

pub use array::{broadcast_shape, Tensor};
pub use gradcheck::{gradcheck, gradcheck_many, Probe};
pub use scalar::{Precision, Scalar};
pub use tape::{sigmoid, PoolAxis, Tape, Var};
