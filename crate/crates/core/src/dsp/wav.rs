//! WAV ingestion: mono mixdown, integer-to-float scaling, linear resampling.

use std::path::Path;

use crate::{Error, Result};

/// Read a PCM WAV file as mono samples at `target_rate`.
///
/// Supported encodings are 16/24-bit integer and 32-bit float. Multi-channel
/// files are mixed down by averaging. Files at a different sample rate are
/// linearly resampled.
pub fn read_wav_mono(path: &Path, target_rate: u32) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::CorruptAudio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::CorruptAudio(format!(
            "{}: zero channels",
            path.display()
        )));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::CorruptAudio(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::CorruptAudio(format!("{}: {e}", path.display())))?
        }
        (fmt, bits) => {
            return Err(Error::CorruptAudio(format!(
                "{}: unsupported encoding {bits}-bit {fmt:?} (expected 16/24-bit int or 32-bit float)",
                path.display()
            )))
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptyInput);
    }
    let frames = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(frames);
    for frame in interleaved.chunks_exact(channels) {
        mono.push(frame.iter().sum::<f32>() / channels as f32);
    }
    if mono.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptAudio(format!(
            "{}: non-finite samples",
            path.display()
        )));
    }
    if spec.sample_rate != target_rate {
        mono = linear_resample(&mono, spec.sample_rate, target_rate)?;
    }
    Ok(mono)
}

/// Linear-interpolation resampling from `from_rate` to `to_rate`.
pub fn linear_resample(samples: &[f32], from_rate: u32, to_rate: u32) -> Result<Vec<f32>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if from_rate == to_rate {
        return Ok(samples.to_vec());
    }
    let out_len =
        ((samples.len() as u64 * to_rate as u64 + from_rate as u64 / 2) / from_rate as u64) as usize;
    let out_len = out_len.max(1);
    let step = from_rate as f64 / to_rate as f64;
    let last = samples.len() - 1;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = (pos - i0 as f64) as f32;
            samples[i0] * (1.0 - frac) + samples[i1] * frac
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(path: &Path, spec: hound::WavSpec, samples: &[f32]) {
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => {
                for &s in samples {
                    w.write_sample(s).unwrap();
                }
            }
            (hound::SampleFormat::Int, bits) => {
                let scale = (1i64 << (bits - 1)) as f32;
                for &s in samples {
                    let v = (s * scale).clamp(-scale, scale - 1.0) as i32;
                    w.write_sample(v).unwrap();
                }
            }
            _ => unreachable!(),
        }
        w.finalize().unwrap();
    }

    #[test]
    fn reads_16_bit_int_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        write_wav(&path, spec, &[0.0, 0.5, -0.5, 0.25]);
        let got = read_wav_mono(&path, 44_100).unwrap();
        assert_eq!(got.len(), 4);
        for (g, e) in got.iter().zip([0.0, 0.5, -0.5, 0.25]) {
            assert!((g - e).abs() < 1e-3, "{g} vs {e}");
        }
    }

    #[test]
    fn stereo_mixes_to_mono_by_averaging() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        write_wav(&path, spec, &[0.8, -0.8, 0.2, 0.6]);
        let got = read_wav_mono(&path, 44_100).unwrap();
        assert_eq!(got.len(), 2);
        assert!((got[0] - 0.0).abs() < 1e-6);
        assert!((got[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn resampling_changes_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22_050,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let samples: Vec<f32> = (0..22_050).map(|i| (i as f32 * 0.001).sin()).collect();
        write_wav(&path, spec, &samples);
        let got = read_wav_mono(&path, 44_100).unwrap();
        assert!((got.len() as i64 - 44_100).abs() <= 1);
    }

    #[test]
    fn resample_identity_and_linearity() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        assert_eq!(linear_resample(&x, 100, 100).unwrap(), x);
        // Doubling the rate of a ramp interpolates midpoints.
        let up = linear_resample(&x, 100, 200).unwrap();
        assert_eq!(up.len(), 8);
        assert!((up[1] - 0.5).abs() < 1e-6);
        assert!((up[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav_mono(&path, 44_100),
            Err(Error::CorruptAudio(_))
        ));
    }
}
