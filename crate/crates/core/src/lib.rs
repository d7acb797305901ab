pub mod error;
pub mod model;
pub mod profile;
pub mod scalar;
pub mod seeds;
pub mod signal;
pub mod tensorcore;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensorcore::Tensor<f32>;
pub type Tensor64 = tensorcore::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
