//! Mel projection, dB scaling and per-channel normalization.

use ndarray::{Array2, Array3, Axis};

use crate::config::FeatureConfig;
use crate::{Error, Result};

use super::{hpss, magnitude_spectrogram, AudioSegment, MelExample, Spectrogram, NUM_CHANNELS};

/// Triangular Mel filterbank spanning 0 Hz to Nyquist, area-normalized so
/// every filter integrates to the same mass regardless of bandwidth.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `[n_mels, freq_bins]` weights.
    pub weights: Array2<f32>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        // n_mels + 2 edge points evenly spaced on the Mel axis.
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = Array2::<f32>::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / fft_size as f64;
                let rising = if center > lo { (f - lo) / (center - lo) } else { 0.0 };
                let falling = if hi > center { (hi - f) / (hi - center) } else { 0.0 };
                let w = rising.min(falling).max(0.0);
                weights[[m, k]] = (w * norm) as f32;
            }
        }
        Self { weights }
    }

    /// Project a magnitude spectrogram onto Mel bands of spectral power.
    pub fn project_power(&self, spec: &Spectrogram) -> Array2<f32> {
        let power = spec.magnitudes.mapv(|v| v * v);
        self.weights.dot(&power)
    }
}

/// Crop or cyclically repeat the frame axis of `[mel, frames]` to `target`.
fn fit_frames(m: &Array2<f32>, target: usize) -> Array2<f32> {
    let frames = m.ncols();
    if frames == target {
        return m.clone();
    }
    let mut out = Array2::<f32>::zeros((m.nrows(), target));
    for t in 0..target {
        out.column_mut(t).assign(&m.column(t % frames));
    }
    out
}

/// Convert a linear-power channel to dB relative to its maximum, clamped to
/// `-db_floor`; an all-zero channel becomes the floor constant.
fn db_normalize(m: &mut Array2<f32>, db_floor: f64) {
    let floor = -(db_floor as f32);
    let max = m.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        m.fill(floor);
        return;
    }
    m.mapv_inplace(|v| {
        if v <= 0.0 {
            floor
        } else {
            (10.0 * (v / max).log10()).max(floor)
        }
    });
}

/// Extract a three-channel Mel example from one fixed-length segment.
///
/// Channel 0 is the Mel spectrogram of the input; channels 1 and 2 are the
/// Mel spectrograms of its harmonic and percussive components. Every channel
/// is dB-scaled and normalized so its maximum is 0 dB. With
/// `cfg.mel_only` set, channels 1 and 2 are copies of channel 0.
pub fn mel_three_channel(seg: &AudioSegment, cfg: &FeatureConfig) -> Result<MelExample> {
    let expected = cfg.segment_len();
    if seg.samples.len() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected} samples"),
            got: format!("{}", seg.samples.len()),
        });
    }
    if seg.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "segment rate {} differs from configured {}",
            seg.sample_rate, cfg.sample_rate
        )));
    }

    let spec = magnitude_spectrogram(&seg.samples, cfg)?;
    let fb = MelFilterbank::new(cfg.mel_bands, cfg.effective_fft_size(), cfg.sample_rate);

    let mel_full = fb.project_power(&spec);
    let channels: [Array2<f32>; NUM_CHANNELS] = if cfg.mel_only {
        [mel_full.clone(), mel_full.clone(), mel_full]
    } else {
        let (h, p) = hpss(&spec, cfg.hpss_kernel, cfg.hpss_power)?;
        [mel_full, fb.project_power(&h), fb.project_power(&p)]
    };

    let mut tensor = Array3::<f32>::zeros((cfg.mel_bands, cfg.frames, NUM_CHANNELS));
    for (ch, mel) in channels.into_iter().enumerate() {
        let mut fitted = fit_frames(&mel, cfg.frames);
        db_normalize(&mut fitted, cfg.db_floor);
        tensor.index_axis_mut(Axis(2), ch).assign(&fitted);
    }

    let example = MelExample {
        tensor,
        label: seg.class_label.clone(),
        example_id: seg.source_id.clone(),
    };
    example.validate(cfg.mel_bands, cfg.frames, cfg.db_floor)?;
    Ok(example)
}

/// Build a [`MelExample`] from a pre-computed Mel matrix `[mel, frames]`.
///
/// Values are taken as already dB-like; the frame axis is repeated or cropped
/// to the configured length, every channel is shifted so its maximum is 0,
/// and the harmonic/percussive channels are copies of the Mel channel (no
/// waveform is available to separate).
pub fn mel_example_from_matrix(
    matrix: &Array2<f32>,
    cfg: &FeatureConfig,
    example_id: &str,
    label: &str,
) -> Result<MelExample> {
    if matrix.nrows() != cfg.mel_bands {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mel bands", cfg.mel_bands),
            got: format!("{}", matrix.nrows()),
        });
    }
    if matrix.is_empty() {
        return Err(Error::EmptyInput);
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("pre-computed features {example_id}")));
    }
    let fitted = fit_frames(matrix, cfg.frames);
    let max = fitted.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let floor = -(cfg.db_floor as f32);
    let shifted = fitted.mapv(|v| (v - max).max(floor));

    let mut tensor = Array3::<f32>::zeros((cfg.mel_bands, cfg.frames, NUM_CHANNELS));
    for ch in 0..NUM_CHANNELS {
        tensor.index_axis_mut(Axis(2), ch).assign(&shifted);
    }
    let example = MelExample {
        tensor,
        label: label.to_string(),
        example_id: example_id.to_string(),
    };
    example.validate(cfg.mel_bands, cfg.frames, cfg.db_floor)?;
    Ok(example)
}
