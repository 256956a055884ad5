//! SNR-adaptive deep joint source-channel coding (JSCC) for wireless image
//! transmission.
//!
//! The pipeline maps source images straight to complex channel symbols with a
//! convolutional encoder, transmits them over a simulated AWGN channel, and
//! reconstructs them with a decoder that consumes an estimate of the channel
//! noise variance. Because the decoder is conditioned on the estimate, a
//! single trained model serves channels at different SNRs — including several
//! users receiving the same broadcast through channels of different quality.
//!
//! Crate layout:
//!
//! - [`channel`]: complex symbol packing, average-power normalization, AWGN,
//!   SNR/variance conversion and SNR-estimation simulation.
//! - [`data`]: CIFAR-10 loading, pixel normalization, batching, and a
//!   deterministic synthetic image set for offline runs.
//! - [`model`]: the encoder, the SNR-adaptive decoder (SNR map, fusion,
//!   denoising module, short-circuit connections), the fixed-SNR baseline
//!   decoder, and checkpointing.
//! - [`train`]: the MSE objective, Adam, the per-iteration random SNR
//!   schedule, learning-rate decay and early stopping.
//! - [`eval`]: PSNR, PSNR-vs-SNR sweeps, model comparison tables/plots,
//!   noisy-SNR-estimation robustness sweeps and multi-user evaluation.
//! - [`config`]: the line-oriented `key = value` run configuration.

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};

// Tensor primitives, re-exported so downstream binaries don't need a direct
// candle dependency for device/dtype selection.
pub use candle_core::{DType, Device};
