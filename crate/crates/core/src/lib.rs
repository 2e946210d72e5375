//! Reconstruction of occluded frames in binary gait-silhouette sequences and
//! GEI-based identification of the reconstructed walkers.
//!
//! Pipeline: each frame is embedded by a convolutional encoder; a forward and
//! a backward LSTM predict the embedding of an occluded frame from the five
//! frames on either side; both predictions are decoded, binarized and merged
//! by a residual fusion network. Reconstructed sequences are scored by Dice
//! similarity of their gait energy images and by rank-k identification with a
//! bagged decision forest.

pub mod autoencoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod nn;
pub mod occlusion;
pub mod pipeline;
pub mod predictor;
pub mod recognition;
pub mod silhouette;
pub mod synth;

pub use error::{Error, Result};
