//! Shaped arrays, the reverse-mode tape, and the kernels both share.

mod array;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod optim;
pub mod serialize;

pub use array::{minmax_normalize, Tensor};
pub use graph::{Graph, Var};
pub use optim::{sgd_step, Adam, OptKind, Optimizer, Param, Sgd};
