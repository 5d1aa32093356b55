//! Differentiable operations on [`Var`](crate::Var).
//!
//! Each op computes its forward value eagerly and records a closure that
//! maps the output gradient to parent gradients.

mod conv;
mod elementwise;
mod linalg;
mod pool;
mod reduce;
mod rotation;
mod sample;
mod shape;
mod unfold;

pub use conv::Conv2dSpec;
pub use rotation::rodrigues_matrix;
pub use unfold::{fold_blocks, unfold_blocks};
