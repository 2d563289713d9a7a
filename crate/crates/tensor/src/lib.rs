//! Tensors, convolution kernels, a portable RNG and a reverse-mode tape whose
//! gradients are themselves differentiable.

pub mod element;
pub mod error;
pub mod functional;
pub mod gradcheck;
pub mod kernels;
pub mod rng;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use rng::Rng;
pub use sparse::{SparseBuilder, SparseMap};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
