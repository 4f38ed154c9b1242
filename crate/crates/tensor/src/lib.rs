//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Ops return [`Var`]
//! handles; [`Tape::backward`] sweeps the tape once in reverse and returns
//! [`Gradients`] for every node that depends on a gradient-requiring leaf.
//!
//! ```
//! use ccnet_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod error;
mod gradcheck;
mod kernels;
mod lion;
mod params;
mod tape;
mod tensor;

pub use error::{IoError, Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use kernels::ConvGeometry;
pub use lion::{LionConfig, LionState};
pub use params::{ParamSet, MAGIC};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
