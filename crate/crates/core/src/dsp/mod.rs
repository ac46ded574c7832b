//! Feature extraction: raw audio to fixed-shape three-channel Mel examples.
//!
//! A recording is cut into 2-second segments (short recordings are repeated
//! from the beginning), each segment is analyzed with 20 ms frames at 50%
//! overlap, the magnitude spectrogram is split into harmonic and percussive
//! components by median filtering, and all three spectrograms are projected
//! through a 40-band Mel filterbank, converted to dB and normalized so that
//! each channel peaks at 0 dB. The result is a 40x200x3 tensor.

mod hpss;
mod mel;
mod segment;
mod stft;
mod wav;

pub use hpss::hpss;
pub use mel::{mel_example_from_matrix, mel_three_channel, MelFilterbank};
pub use segment::load_and_segment;
pub use stft::magnitude_spectrogram;
pub use wav::{linear_resample, read_wav_mono};

use ndarray::{Array2, Array3};

use crate::{Error, Result};

/// A fixed-length mono audio segment tagged with its provenance.
#[derive(Debug, Clone)]
pub struct AudioSegment {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
    pub class_label: String,
}

impl AudioSegment {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Magnitude spectrogram with the framing parameters that produced it.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Nonnegative magnitudes, laid out `[freq_bins, frames]`.
    pub magnitudes: Array2<f32>,
    pub frame_ms: f64,
    pub overlap: f64,
    pub fft_size: usize,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

/// Channel order of a [`MelExample`] tensor.
pub const CHANNEL_MEL: usize = 0;
pub const CHANNEL_HARMONIC: usize = 1;
pub const CHANNEL_PERCUSSIVE: usize = 2;
pub const NUM_CHANNELS: usize = 3;

/// A dB-scaled, max-normalized three-channel Mel tensor,
/// laid out `[mel_band, frame, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelExample {
    pub tensor: Array3<f32>,
    pub label: String,
    pub example_id: String,
}

impl MelExample {
    /// Validate the structural invariants: expected shape, finite entries,
    /// and per-channel maximum of 0 dB (or an all-floor silent channel).
    pub fn validate(&self, mel_bands: usize, frames: usize, db_floor: f64) -> Result<()> {
        let shape = self.tensor.shape();
        if shape != [mel_bands, frames, NUM_CHANNELS] {
            return Err(Error::ShapeMismatch {
                expected: format!("[{mel_bands}, {frames}, {NUM_CHANNELS}]"),
                got: format!("{shape:?}"),
            });
        }
        if self.tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mel example {}", self.example_id)));
        }
        let floor = -db_floor as f32;
        for ch in 0..NUM_CHANNELS {
            let channel = self.tensor.index_axis(ndarray::Axis(2), ch);
            let max = channel.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let silent = channel.iter().all(|&v| (v - floor).abs() <= 1e-6);
            if !silent && max.abs() > 1e-6 {
                return Err(Error::Data(format!(
                    "channel {ch} of {} peaks at {max} dB instead of 0",
                    self.example_id
                )));
            }
        }
        Ok(())
    }
}
