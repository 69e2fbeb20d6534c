//! Acoustic models for singing voice synthesis built on a small
//! reverse-mode autodiff engine: a discrete-feedback autoregressive F0
//! model with hierarchical softmax output and moving-average
//! post-processing, a continuous spectral autoregressive model with a
//! causal self-attention prenet, a bidirectional-GRU + MLPG baseline, a
//! deterministic synthetic singing corpus, and the objective metrics to
//! compare them.

pub mod checkpoint;
pub mod codec;
pub mod corpus;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod mlpg;
pub mod models;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod postprocess;
pub mod tape;
pub mod tensor;

pub use error::{Result, SvsError};
pub use tensor::Tensor;
