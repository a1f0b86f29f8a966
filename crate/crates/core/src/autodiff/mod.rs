//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Only the operations the adapter stack needs are provided: stride-1
//! convolution, batch norm, leaky ReLU, half-pixel bilinear resize,
//! per-cell attention fusion, a handful of elementwise and reduction ops,
//! and fused detection losses.

mod adam;
mod attention;
mod conv;
pub mod ctns;
pub mod gradcheck;
mod graph;
mod losses;
mod norm;
mod real;
mod resize;
mod tensor;

pub use adam::AdamState;
pub use graph::{Graph, Var};
pub use norm::BatchStats;
pub use real::Real;
pub use resize::{half_pixel_taps, Tap};
pub use tensor::Tensor;

pub(crate) use graph::{sigmoid, softplus};
