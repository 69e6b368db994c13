//! Weight-shared 1×1 convolutional autoencoder for recommendation.
//!
//! The model reads each user's row of the interaction matrix as an
//! `n × (k+1)` one-hot grid (channel 0 meaning "not observed"), squeezes it
//! through an `r`-dimensional bottleneck and decodes per-item scores over
//! the same `k+1` classes. A single network therefore predicts both whether
//! a user will interact with an item and the distribution of the rating
//! they would give.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
