//! Tag-free fixation predictors distilled from pseudofixations: the STA net,
//! the graph-reasoning STA+ nets, and the final map fusions.

mod fuse;
mod model;
mod train;

pub use fuse::{fuse_agg, fuse_final};
pub use model::{sta_fuse, Decoder, FpKind, FpNet, FpSpec, StaBranch, StaOutput};
pub use train::{held_out_cc, train_fixation, FpExample, FpTrainConfig, FpTrainReport};
