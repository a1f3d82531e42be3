//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is rebuilt on every forward pass. Each primitive checks its
//! output for NaN/Inf and records what its adjoint needs; [`Tape::backward`]
//! walks the record once in reverse and yields [`Gradients`] for every
//! trainable leaf.
//!
//! ```
//! use tapcrnn_core::autodiff::{Array, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.var(Array::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{gradcheck, gradient_error, BlockReport, GradcheckConfig, GradcheckReport};
pub use tape::{Gradients, NodeId, Tape};
