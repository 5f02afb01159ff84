pub mod camscam;
pub mod cgcn;
pub mod error;
pub mod fixation;
pub mod fsio;
pub mod gradsuite;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod nets;
pub mod region;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The pipeline runs in double precision; the `*32` aliases exist for
/// callers who trade accuracy for memory.
pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type ClsNet = nets::ClsNet<f64>;
pub type FpNet = fixation::FpNet<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = tensor::Graph<f32>;
pub type ClsNet32 = nets::ClsNet<f32>;
pub type FpNet32 = fixation::FpNet<f32>;
