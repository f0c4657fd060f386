//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Graph`] records every forward op; [`Graph::backward`] sweeps the
//! node list in reverse from a scalar root. Parameters live in a
//! [`ParamStore`] that graphs borrow, so independent graphs over the same
//! parameters can be built and differentiated concurrently.
//!
//! The op set is deliberately narrow: affine maps, valid-padding 1-D
//! convolution, elementwise nonlinearities, axis reductions (sum, mean,
//! masked max, softmax, log-sum-exp), layout ops (broadcast, concat,
//! reshape, slice), batched 2x2 matrix ops and `stop_gradient`. There are
//! no normalization layers.

mod error;
pub mod gradcheck;
mod graph;
pub mod optim;
mod param;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT};
pub use tensor::Tensor;
