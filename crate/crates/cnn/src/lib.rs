//! From-scratch convolutional detector for jamming-attack presence:
//! two 3x3 convolutions with batch norm, two dense layers with dropout,
//! softmax output, trained with Adam on categorical cross-entropy.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod layers;
pub mod network;
pub mod params;
pub mod real;
pub mod subnormal;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use arch::Architecture;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{Batch, BatchSource, DatasetSource, InMemory};
pub use error::{CnnError, Result};
pub use network::{Forward, Mode, Network, Workspace};
pub use params::Params;
pub use real::Real;
pub use train::{evaluate, fit, score, train, EpochStats, Evaluation, History, TrainConfig};
