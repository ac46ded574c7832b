//! Synthetic benchmark signals.
//!
//! Six acoustically distinct classes — two steady tones, rising and falling
//! chirps, a percussive click train and amplitude-modulated noise — with
//! per-example jitter in frequency, level, phase and noise floor. Used by
//! the desk-scale benchmarks and available as WAV files for the CLI.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::{derive_seed, FeatureConfig};
use crate::dsp::{load_and_segment, mel_three_channel};
use crate::store::Dataset;
use crate::{Error, Result};

/// The benchmark classes, ordered.
pub const CLASSES: [&str; 6] = [
    "chirp_down",
    "chirp_up",
    "click_train",
    "noise_am",
    "tone_high",
    "tone_low",
];

/// Generate one signal of the named class.
pub fn signal(
    class: &str,
    rng: &mut ChaCha8Rng,
    sample_rate: u32,
    seconds: f64,
) -> Result<Vec<f32>> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let amp = 0.4 + rng.gen::<f64>() * 0.3;
    let noise_floor = 10f64.powf(-(30.0 + rng.gen::<f64>() * 10.0) / 20.0);
    let phase0 = rng.gen::<f64>() * 2.0 * PI;
    let jitter = 0.96 + rng.gen::<f64>() * 0.08;

    let mut out = vec![0.0f32; n];
    match class {
        "tone_low" | "tone_high" => {
            let f0 = if class == "tone_low" { 650.0 } else { 2400.0 } * jitter;
            let vib_rate = 3.0 + rng.gen::<f64>() * 3.0;
            let vib_depth = 0.01 + rng.gen::<f64>() * 0.01;
            let mut phase = phase0;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
                phase += 2.0 * PI * f / sr;
                *o = (amp * phase.sin()) as f32;
            }
        }
        "chirp_up" | "chirp_down" => {
            let (f_start, f_end) = if class == "chirp_up" {
                (500.0 * jitter, 3200.0 * jitter)
            } else {
                (3200.0 * jitter, 500.0 * jitter)
            };
            let mut phase = phase0;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr / seconds;
                let f = f_start + (f_end - f_start) * t;
                phase += 2.0 * PI * f / sr;
                *o = (amp * phase.sin()) as f32;
            }
        }
        "click_train" => {
            // Broadband noise bursts of ~1.5 ms: vertical lines on the
            // spectrogram.
            let rate = 10.0 + rng.gen::<f64>() * 6.0;
            let period = (sr / rate) as usize;
            let offset = rng.gen_range(0..period.max(1));
            let burst = (0.0015 * sr) as usize;
            let mut i = offset;
            while i < n {
                for k in 0..burst.min(n - i) {
                    let env = 1.0 - k as f64 / burst as f64;
                    out[i + k] += (amp * env * (rng.gen::<f64>() * 2.0 - 1.0)) as f32;
                }
                i += period.max(1);
            }
        }
        "noise_am" => {
            let am_rate = 2.0 + rng.gen::<f64>() * 3.0;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let env = 0.55 + 0.45 * (2.0 * PI * am_rate * t + phase0).sin();
                let white = rng.gen::<f64>() * 2.0 - 1.0;
                *o = (amp * env * white * 0.5) as f32;
            }
        }
        other => return Err(Error::Config(format!("unknown synthetic class {other:?}"))),
    }
    // Additive noise floor on every class.
    for o in out.iter_mut() {
        *o += (noise_floor * (rng.gen::<f64>() * 2.0 - 1.0)) as f32;
    }
    Ok(out)
}

fn example_rng(seed: u64, class: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synth/{class}/{index}")))
}

/// Generate a labeled in-memory feature dataset through the real feature
/// pipeline (segmentation, separation, Mel projection, normalization).
pub fn dataset(
    cfg: &FeatureConfig,
    classes: &[&str],
    per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, &str)> = classes
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (i, c)))
        .collect();
    let examples = jobs
        .par_iter()
        .map(|&(i, class)| {
            let mut rng = example_rng(seed, class, i);
            let samples = signal(class, &mut rng, cfg.sample_rate, cfg.segment_seconds)?;
            let segs = load_and_segment(
                &samples,
                cfg.sample_rate,
                cfg.segment_seconds,
                &format!("{class}/{i:03}"),
                class,
            )?;
            mel_three_channel(&segs[0], cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { examples })
}

/// Write WAV files plus a manifest for CLI-driven runs. Returns the
/// manifest path.
pub fn write_wav_dataset(
    dir: &Path,
    classes: &[&str],
    per_class: usize,
    seed: u64,
    sample_rate: u32,
    seconds: f64,
) -> Result<PathBuf> {
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut manifest = String::from("example_id,audio_path,class_label\n");
    for &class in classes {
        for i in 0..per_class {
            let mut rng = example_rng(seed, class, i);
            let samples = signal(class, &mut rng, sample_rate, seconds)?;
            let name = format!("{class}_{i:03}.wav");
            let path = audio_dir.join(&name);
            let mut w = hound::WavWriter::create(&path, spec)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for s in &samples {
                let v = (s.clamp(-1.0, 1.0) * 32767.0) as i16;
                w.write_sample(v)
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            }
            w.finalize()
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            manifest.push_str(&format!("{class}_{i:03},audio/{name},{class}\n"));
        }
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn signals_are_deterministic_per_seed() {
        let mut a = example_rng(7, "tone_low", 0);
        let mut b = example_rng(7, "tone_low", 0);
        let sa = signal("tone_low", &mut a, 44_100, 2.0).unwrap();
        let sb = signal("tone_low", &mut b, 44_100, 2.0).unwrap();
        assert_eq!(sa, sb);
        let mut c = example_rng(7, "tone_low", 1);
        let sc = signal("tone_low", &mut c, 44_100, 2.0).unwrap();
        assert_ne!(sa, sc);
    }

    #[test]
    fn dataset_has_expected_shape_and_labels() {
        let mut cfg = FeatureConfig::default();
        cfg.hpss_kernel = 9;
        let ds = dataset(&cfg, &["tone_low", "click_train"], 2, 3).unwrap();
        assert_eq!(ds.len(), 4);
        for e in &ds.examples {
            assert_eq!(e.tensor.shape(), [40, 200, 3]);
        }
        assert_eq!(ds.classes(), vec!["click_train".to_string(), "tone_low".to_string()]);
    }

    /// The percussive share dominates for clicks and the harmonic share
    /// dominates for tones, measured in the linear mel power domain before
    /// any per-channel normalization.
    #[test]
    fn channel_signatures_differ_by_class() {
        use crate::dsp::{hpss, magnitude_spectrogram, MelFilterbank};
        let cfg = FeatureConfig::default();
        let fb = MelFilterbank::new(cfg.mel_bands, cfg.effective_fft_size(), cfg.sample_rate);
        for (class, want_harmonic) in [("tone_low", true), ("click_train", false)] {
            let mut rng = example_rng(5, class, 0);
            let samples = signal(class, &mut rng, cfg.sample_rate, 2.0).unwrap();
            let spec = magnitude_spectrogram(&samples, &cfg).unwrap();
            let (h, p) = hpss(&spec, cfg.hpss_kernel, cfg.hpss_power).unwrap();
            let eh: f64 = fb.project_power(&h).iter().map(|&v| v as f64).sum();
            let ep: f64 = fb.project_power(&p).iter().map(|&v| v as f64).sum();
            let share = if want_harmonic { eh } else { ep } / (eh + ep);
            assert!(share >= 0.8, "{class}: dominant share {share}");
        }
    }

    #[test]
    fn wav_dataset_writes_manifest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            write_wav_dataset(dir.path(), &["tone_low", "noise_am"], 2, 9, 44_100, 2.0).unwrap();
        let m = crate::store::Manifest::load(&manifest).unwrap();
        assert_eq!(m.rows.len(), 4);
        for row in &m.rows {
            assert!(m.resolve_path(row).exists());
        }
    }
}
