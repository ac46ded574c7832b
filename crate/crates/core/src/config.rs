//! Pipeline configuration.
//!
//! Every stage reads its parameters from one [`PipelineConfig`] so that a
//! single TOML file (plus command-line overrides) reproduces a run end to
//! end. All sections have defaults; a config file only needs the keys it
//! wants to change. The effective configuration is echoed into evaluation
//! reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Short-time analysis and Mel feature parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Canonical sample rate; inputs at other rates are linearly resampled.
    pub sample_rate: u32,
    /// Segment length in seconds. Recordings shorter than this are repeated
    /// from the beginning; longer ones are cut into non-overlapping windows.
    pub segment_seconds: f64,
    /// Analysis frame size in milliseconds.
    pub frame_ms: f64,
    /// Fractional frame overlap (0.5 = half-frame hop).
    pub overlap: f64,
    /// FFT size; 0 means "next power of two above the frame length".
    pub fft_size: usize,
    /// Number of Mel bands.
    pub mel_bands: usize,
    /// Fixed number of output frames per example.
    pub frames: usize,
    /// Median filter length for harmonic/percussive separation, both axes.
    pub hpss_kernel: usize,
    /// Soft mask exponent for harmonic/percussive separation.
    pub hpss_power: f64,
    /// Dynamic range floor in dB below the per-channel maximum.
    pub db_floor: f64,
    /// Ablation switch: duplicate the Mel channel instead of computing
    /// harmonic and percussive channels.
    pub mel_only: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            segment_seconds: 2.0,
            frame_ms: 20.0,
            overlap: 0.5,
            fft_size: 0,
            mel_bands: 40,
            frames: 200,
            hpss_kernel: 17,
            hpss_power: 2.0,
            db_floor: 80.0,
            mel_only: false,
        }
    }
}

impl FeatureConfig {
    /// Frame length in samples at the configured rate.
    pub fn frame_len(&self) -> usize {
        ((self.frame_ms / 1000.0) * self.sample_rate as f64).round() as usize
    }

    /// Hop length in samples.
    pub fn hop_len(&self) -> usize {
        let hop = self.frame_len() as f64 * (1.0 - self.overlap);
        hop.round().max(1.0) as usize
    }

    /// Effective FFT size (next power of two above the frame unless pinned).
    pub fn effective_fft_size(&self) -> usize {
        if self.fft_size > 0 {
            self.fft_size
        } else {
            self.frame_len().next_power_of_two()
        }
    }

    /// Samples per segment.
    pub fn segment_len(&self) -> usize {
        (self.segment_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.segment_seconds <= 0.0 {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config("overlap must lie in [0, 1)".into()));
        }
        if self.mel_bands == 0 || self.frames == 0 {
            return Err(Error::Config("mel_bands and frames must be positive".into()));
        }
        if self.hpss_kernel == 0 || self.hpss_kernel % 2 == 0 {
            return Err(Error::Config("hpss_kernel must be odd and positive".into()));
        }
        if self.effective_fft_size() < self.frame_len() {
            return Err(Error::Config("fft_size must be >= frame length".into()));
        }
        Ok(())
    }
}

/// Margin schedule parameters for the dynamic triplet loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginConfig {
    pub alpha_init: f64,
    pub alpha_step: f64,
    pub alpha_cap: f64,
    /// Mined-count threshold that must be undercut to raise the margin.
    pub thresh: u32,
    /// Number of consecutive low-count iterations required.
    pub window: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            alpha_init: 0.2,
            alpha_step: 0.05,
            alpha_cap: 0.6,
            thresh: 15,
            window: 3,
        }
    }
}

/// Metric-learning training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricTrainConfig {
    pub epochs: usize,
    /// Upper bound on mini-batches per epoch.
    pub minibatches_per_epoch: usize,
    /// Maximum number of triplets fed to the network per weight update.
    pub triplet_batch_cap: usize,
    /// Examples drawn per class per mini-batch.
    pub per_class: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: MarginConfig,
    pub seed: u64,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            minibatches_per_epoch: 1000,
            triplet_batch_cap: 50,
            per_class: 5,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            margin: MarginConfig::default(),
            seed: 42,
        }
    }
}

/// Cross-entropy baseline training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            seed: 42,
        }
    }
}

/// Embedding-space MLP classifier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.001,
            l2: 0.0001,
            seed: 42,
        }
    }
}

/// Network width parameters, kept here so a config file can shrink the
/// model for quick experiments. Structural wiring lives in [`crate::net`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub conv_filters: usize,
    pub mam_strand_filters: usize,
    pub mam_reduce_filters: usize,
    pub dense_units: (usize, usize, usize),
    pub dropout: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            conv_filters: 64,
            mam_strand_filters: 64,
            mam_reduce_filters: 32,
            dense_units: (256, 128, 128),
            dropout: 0.5,
        }
    }
}

/// Top-level configuration document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub network: NetworkSection,
    pub metric_train: MetricTrainConfig,
    pub baseline_train: BaselineTrainConfig,
    pub mlp: MlpConfig,
    /// Split ratios for train/validation/test.
    pub split_ratios: SplitRatios,
}

/// Per-class split fractions; the test share is the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.50,
            val: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val < 0.0 || self.train + self.val >= 1.0 {
            return Err(Error::Config(
                "split ratios must satisfy 0 < train, 0 <= val, train + val < 1".into(),
            ));
        }
        Ok(())
    }
}

impl PipelineConfig {
    /// Load a TOML config file; unknown keys are rejected to catch typos.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.features.validate()?;
        cfg.split_ratios.validate()?;
        Ok(cfg)
    }

    /// Serialize the effective configuration for report echoing.
    pub fn echo_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Derive a sub-seed for a named purpose so that independent random streams
/// never share state. FNV-1a over the tag, mixed with the base seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base.rotate_left(17)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.features.validate().unwrap();
        cfg.split_ratios.validate().unwrap();
        assert_eq!(cfg.features.frame_len(), 882);
        assert_eq!(cfg.features.hop_len(), 441);
        assert_eq!(cfg.features.effective_fft_size(), 1024);
        assert_eq!(cfg.features.segment_len(), 88_200);
    }

    #[test]
    fn partial_toml_round_trip() {
        let text = "[features]\nmel_only = true\n\n[metric_train]\nepochs = 3\n";
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        assert!(cfg.features.mel_only);
        assert_eq!(cfg.metric_train.epochs, 3);
        assert_eq!(cfg.metric_train.triplet_batch_cap, 50);
        assert_eq!(cfg.baseline_train.batch_size, 32);
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        let a = derive_seed(7, "dropout");
        let b = derive_seed(7, "miner");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, "dropout"));
    }
}
