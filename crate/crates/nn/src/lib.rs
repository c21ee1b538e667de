//! Tensor kernels and reverse-mode autodiff used by the ReMIC networks.
//!
//! Everything here is generic over [`Scalar`] so the same graph code trains
//! in `f32` and is gradient-checked in `f64`.

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use blocks::{residual_block, ConvVars, ResidualNorm};
pub use error::{NnError, Result};
pub use ops::{AffineStats, ConvSpec, LEAKY_SLOPE, NORM_EPS};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
