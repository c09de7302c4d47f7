//! Embedding network, optimizer and training.

pub mod adadelta;
pub mod dae;
pub mod io;
pub mod matrix;
pub mod model;
pub mod train;

pub use model::{similarity, traj_forward_calls, Dims, EmbeddingModel, Weights};
pub use train::{train_full, TrainConfig, TrainLog, Trained};
