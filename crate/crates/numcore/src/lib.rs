//! Minimal dense-tensor math: a define-by-run graph with reverse-mode
//! differentiation, the Adam optimizer, and a finite-difference checker.
//!
//! Computation runs in `f32`; every type is generic over [`Scalar`] so
//! gradient checks can run the same code in `f64`.

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod positions;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{Gradients, ParamId, ParamStore};
pub use positions::sinusoidal_positions;
pub use scalar::Scalar;
pub use tensor::Tensor;
