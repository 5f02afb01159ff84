//! Trainable encoders, source fusion, the GAP classifier head, the audio
//! switch, checkpoints and the classification training loop.

pub mod checkpoint;
pub mod classifier;
pub mod encoders;
pub mod fragment;
pub mod fusion;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use classifier::{ClassifierOutput, Classifier, HeadOutput};
pub use encoders::{AudioEncoder, AudioProjector, SpatialEncoder, SpatialFeature, TemporalEncoder};
pub use fragment::VideoFragment;
pub use fusion::{sa_fuse, st_fuse};
pub use models::{ClsNet, NetInput, NetKind, NetSpec, Source};
pub use params::{Ctx, ParamId, ParamStore};
pub use train::{accuracy, train_classifier, ClsExample, TrainConfig};
