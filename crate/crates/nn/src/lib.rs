//! # ecog-nn
//!
//! A small deterministic deep-learning engine for epoch classification:
//!
//! ```text
//! EpochSet ─▶ TensorN [n, time, channels, 1]
//!                │
//!                ▼
//!   ModelGraph: Conv2D · MaxPool2D · ReLU · Dropout · Flatten · Dense
//!               · LSTM · BatchNorm · Softmax      (layers, model)
//!                │
//!   train / fine_tune (Adam | SGD, cross-entropy, early stop)   (train)
//!   hyper_search (seeded random search, leaderboard)            (search)
//!   save_model / load_model (ECNN1 files)                       (io)
//! ```
//!
//! Compute is `f32`; every layer is generic over [`Scalar`] so gradient
//! checks run the identical code in `f64`. All randomness (init, shuffling,
//! dropout, search) derives from explicit seeds.

pub mod error;
pub mod io;
pub mod layers;
pub mod model;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use io::{content_hash, load_model, save_model};
pub use layers::{LayerSpec, Padding};
pub use model::{ArchParams, Evaluation, Family, ModelGraph};
pub use search::{hyper_search, Leaderboard, SearchOutcome, SearchSpace, TaskSpec, TrialResult};
pub use tensor::{epochs_to_tensor, Scalar, Tensor, TensorN};
pub use train::{fine_tune, train, History, Optimizer, TrainConfig};
