pub mod autodiff;
pub mod data;
pub mod moe;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError, TensorResult};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type GraphF64 = Graph<f64>;
pub type GraphF32 = Graph<f32>;
pub type ModelF64 = train::Model<f64>;
pub type ModelF32 = train::Model<f32>;
