//! Differentiable tensor primitives and the three networks.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod nets;
pub mod params;
pub mod tensor;

pub use graph::{image_gradient, Grads, Graph, Var};
pub use kernels::{ConvSpec, Padding};
pub use layers::{broadcast_atmosphere, channel_shuffle, sdw_conv};
pub use nets::{anet_forward, snet_forward, vnet_forward};
pub use params::{init_params, Arch, ArchConfig, Bound, ParamSet};
pub use tensor::Tensor;
