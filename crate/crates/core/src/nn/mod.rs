//! Differentiable volumetric building blocks on a small reverse-mode autodiff
//! engine.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_check, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{scaled, Conv, ConvInRelu, Mlp, Modulation, ResBlock};
pub use params::ParamStore;
pub use tensor::{Real, Tensor};
