//! Fixed-length segmentation with repeat padding for short recordings.

use crate::{Error, Result};

use super::AudioSegment;

/// Cut a recording into fixed-length segments.
///
/// A recording shorter than one segment is repeated from the beginning until
/// it fills a segment. Longer recordings yield non-overlapping segments; a
/// trailing remainder shorter than a segment is discarded. Segments are
/// tagged `source_id#<index>`.
pub fn load_and_segment(
    audio: &[f32],
    sample_rate: u32,
    segment_seconds: f64,
    source_id: &str,
    class_label: &str,
) -> Result<Vec<AudioSegment>> {
    if sample_rate == 0 {
        return Err(Error::Config("sample_rate must be positive".into()));
    }
    if audio.is_empty() {
        return Err(Error::EmptyInput);
    }
    if audio.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptAudio(format!(
            "non-finite samples in {source_id}"
        )));
    }
    let seg_len = (segment_seconds * sample_rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::Config("segment length rounds to zero".into()));
    }

    let make = |samples: Vec<f32>, index: usize| AudioSegment {
        samples,
        sample_rate,
        source_id: format!("{source_id}#{index}"),
        class_label: class_label.to_string(),
    };

    if audio.len() < seg_len {
        let samples = (0..seg_len).map(|i| audio[i % audio.len()]).collect();
        return Ok(vec![make(samples, 0)]);
    }

    Ok(audio
        .chunks_exact(seg_len)
        .enumerate()
        .map(|(i, chunk)| make(chunk.to_vec(), i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 44_100;

    fn ramp(n: usize) -> Vec<f32> {
        (0..n).map(|i| i as f32).collect()
    }

    #[test]
    fn short_clip_repeats_from_beginning() {
        // 0.5 s at 44.1 kHz repeats four times into one 2 s segment.
        let clip = ramp(22_050);
        let segs = load_and_segment(&clip, SR, 2.0, "x", "c").unwrap();
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!(s.samples.len(), 88_200);
        // Repeat padding: the first N samples equal the original clip.
        assert_eq!(&s.samples[..clip.len()], &clip[..]);
        for i in 0..s.samples.len() {
            assert_eq!(s.samples[i], clip[i % clip.len()]);
        }
    }

    #[test]
    fn exact_multiple_splits_cleanly() {
        let clip = ramp(4 * SR as usize);
        let segs = load_and_segment(&clip, SR, 2.0, "x", "c").unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].samples[0], 0.0);
        assert_eq!(segs[1].samples[0], 88_200.0);
        assert_eq!(segs[0].source_id, "x#0");
        assert_eq!(segs[1].source_id, "x#1");
    }

    #[test]
    fn trailing_remainder_is_discarded() {
        // 5 s yields two 2 s segments; windows enumerated by hand:
        // [0, 88200), [88200, 176400), and samples [176400, 220500) dropped.
        let clip = ramp(5 * SR as usize);
        let segs = load_and_segment(&clip, SR, 2.0, "x", "c").unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(*segs[1].samples.last().unwrap(), 176_399.0);
    }

    #[test]
    fn empty_audio_is_an_error() {
        assert!(matches!(
            load_and_segment(&[], SR, 2.0, "x", "c"),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn non_finite_audio_is_corrupt() {
        let clip = vec![0.0, f32::NAN, 0.1];
        assert!(matches!(
            load_and_segment(&clip, SR, 2.0, "x", "c"),
            Err(Error::CorruptAudio(_))
        ));
    }

    #[test]
    fn exactly_one_segment_boundary() {
        let clip = ramp(88_200);
        let segs = load_and_segment(&clip, SR, 2.0, "x", "c").unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].samples, clip);
    }
}
