//! Deep metric learning toolkit for bioacoustic classification.
//!
//! The pipeline turns raw audio into three-channel Mel features (original,
//! harmonic and percussive components), maps them onto a 128-D unit
//! hypersphere with a multiscale CNN trained by a dynamic-margin triplet
//! loss, classifies embeddings with a small MLP, and optionally rejects
//! out-of-set examples with per-class Gaussian distance models.
//!
//! Modules follow the processing order:
//!
//! - [`dsp`] — segmentation, STFT, harmonic/percussive separation, Mel
//!   projection and dB normalization
//! - [`net`] — the multiscale CNN (metric and softmax heads), checkpoints
//! - [`metric`] — triplet mining, triplet loss and margin scheduling
//! - [`train`] — metric and cross-entropy training loops
//! - [`head`] — embedding-space MLP classifier and Gaussian rejection
//! - [`eval`] — stratified splits, macro-F1 scoring, report generation
//! - [`store`] — dataset manifests and the on-disk feature store
//! - [`synth`] — synthetic signal generator for benchmarks and tests

pub mod config;
pub mod dsp;
pub mod eval;
pub mod metric;
pub mod head;
pub mod net;
pub mod store;
pub mod synth;
pub mod train;
mod error;

pub use error::{Error, Result};
