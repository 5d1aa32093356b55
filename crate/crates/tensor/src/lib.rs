//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! [`Tensor`] is an immutable-by-convention value. A [`Graph`] records
//! every op applied to its [`Var`]s; [`Graph::backward`] sweeps the tape in
//! reverse and returns [`Gradients`] for all leaves created with
//! [`Graph::param`].
//!
//! ```
//! use posecue_tensor::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
pub mod optim;
pub mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_many, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::Conv2dSpec;
pub use optim::Adam;
pub use params::{Bound, ParamId, ParamStore};
pub use real::{gemm, MatView, Real};
pub use tensor::{numel, Tensor};

pub use ops::{fold_blocks, unfold_blocks};

/// Rotation matrix of an axis-angle vector (value-level Rodrigues formula).
pub use ops::rodrigues_matrix;
