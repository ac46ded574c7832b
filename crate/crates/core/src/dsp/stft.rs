//! Short-time Fourier analysis producing magnitude spectrograms.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::config::FeatureConfig;
use crate::{Error, Result};

use super::Spectrogram;

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f32::consts::PI * i as f32 / n as f32).cos()))
        .collect()
}

/// Compute the magnitude spectrogram of a mono signal.
///
/// Frames of `frame_ms` with `overlap` hop are Hann-windowed, zero-padded to
/// the FFT size and transformed; the signal is zero-padded by half a frame on
/// both ends so frames are centered on the signal. The output holds the
/// single-sided magnitudes `[fft_size/2 + 1, frames]`.
pub fn magnitude_spectrogram(samples: &[f32], cfg: &FeatureConfig) -> Result<Spectrogram> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptAudio("non-finite samples".into()));
    }
    let frame = cfg.frame_len();
    let hop = cfg.hop_len();
    let fft_size = cfg.effective_fft_size();
    let bins = fft_size / 2 + 1;

    let pad = frame / 2;
    let padded_len = samples.len() + 2 * pad;
    let n_frames = if padded_len >= frame {
        (padded_len - frame) / hop + 1
    } else {
        1
    };

    let window = hann(frame);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0f32, 0.0); fft_size];

    let sample_at = |idx: usize| -> f32 {
        if idx < pad || idx >= pad + samples.len() {
            0.0
        } else {
            samples[idx - pad]
        }
    };

    let mut mags = Array2::<f32>::zeros((bins, n_frames));
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < frame {
                sample_at(start + i) * window[i]
            } else {
                0.0
            };
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, out) in mags.column_mut(t).iter_mut().enumerate() {
            *out = buf[k].norm();
        }
    }

    Ok(Spectrogram {
        magnitudes: mags,
        frame_ms: cfg.frame_ms,
        overlap: cfg.overlap,
        fft_size,
    })
}
