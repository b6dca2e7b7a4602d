//! Multimodal multi-speaker acoustic model.
//!
//! A stack of shared "common" layers maps an encoded input sequence to
//! frame-level acoustic features. The stack can sit on top of either a
//! linguistic encoder (text features in) or a raw-waveform speech encoder
//! (audio in). Speaker identity enters as a learned embedding concatenated to
//! the inputs of the speaker-aware common layers, so a new voice can be fitted
//! by optimising only its embedding through whichever encoder matches the
//! available adaptation data: transcribed (text path) or untranscribed
//! (speech path).
//!
//! Modules:
//! - [`numerics`]: dense/conv kernels, MSE, Adam, finite-difference checks
//! - [`model`]: the two-encoder graph, parameter scopes, checkpoints
//! - [`training`]: vanilla, step-by-step, stochastic, joint-goal and
//!   tied-layer training with early stopping
//! - [`adaptation`]: supervised and unsupervised embedding estimation
//! - [`data`]: synthetic corpus generator and the on-disk formats
//! - [`metrics`]: mel-cepstral distortion, F0 RMSE, evaluation reports
//! - [`experiment`]: strategy training, scoring and adaptation sweeps used by
//!   the reproduction profiles

pub mod adaptation;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
