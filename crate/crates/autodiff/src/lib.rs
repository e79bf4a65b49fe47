//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! The engine is intentionally narrow: it provides exactly the operations the
//! translation networks need (convolutions, instance normalization, channel
//! affine modulation, pooling and elementwise maps), runs single threaded and
//! is bit-reproducible for a fixed platform.

pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("empty tensor list")]
    Empty,
}
