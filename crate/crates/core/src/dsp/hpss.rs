//! Harmonic/percussive separation by median filtering.
//!
//! Harmonic content forms horizontal ridges on a spectrogram (steady in
//! time), percussive content forms vertical ridges (broadband, short).
//! Median filtering each row over time enhances the harmonic part; median
//! filtering each column over frequency enhances the percussive part. The
//! enhanced spectrograms are turned into soft masks which partition the
//! input exactly: `H + P = S` elementwise.

use ndarray::Array2;

use crate::{Error, Result};

use super::Spectrogram;

/// Split a magnitude spectrogram into harmonic and percussive components.
///
/// `kernel` is the median filter length on both axes (odd); `power` is the
/// soft-mask exponent. Where both enhanced magnitudes are zero the masks are
/// defined as 0.5 each, which keeps `M_h + M_p = 1` everywhere.
pub fn hpss(spec: &Spectrogram, kernel: usize, power: f64) -> Result<(Spectrogram, Spectrogram)> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config("hpss kernel must be odd and positive".into()));
    }
    let s = &spec.magnitudes;
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data("spectrogram must be finite and nonnegative".into()));
    }

    let harm_enh = median_filter_rows(s, kernel);
    let perc_enh = median_filter_cols(s, kernel);

    let p = power as f32;
    let mut h = Array2::<f32>::zeros(s.raw_dim());
    let mut pmat = Array2::<f32>::zeros(s.raw_dim());
    for ((idx, &v), (&he, &pe)) in s
        .indexed_iter()
        .zip(harm_enh.iter().zip(perc_enh.iter()))
    {
        let hp = he.powf(p);
        let pp = pe.powf(p);
        let denom = hp + pp;
        let mask_h = if denom > 0.0 { hp / denom } else { 0.5 };
        h[idx] = v * mask_h;
        pmat[idx] = v * (1.0 - mask_h);
    }

    let wrap = |m: Array2<f32>| Spectrogram {
        magnitudes: m,
        frame_ms: spec.frame_ms,
        overlap: spec.overlap,
        fft_size: spec.fft_size,
    };
    Ok((wrap(h), wrap(pmat)))
}

/// Reflected (symmetric) boundary index: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

fn median_of(buf: &mut [f32]) -> f32 {
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
    *m
}

/// Median filter along the time axis (each row independently).
fn median_filter_rows(s: &Array2<f32>, kernel: usize) -> Array2<f32> {
    let (rows, cols) = s.dim();
    let half = (kernel / 2) as isize;
    let mut out = Array2::<f32>::zeros((rows, cols));
    let mut window = vec![0.0f32; kernel];
    for r in 0..rows {
        for c in 0..cols {
            for (w, off) in window.iter_mut().zip(-half..=half) {
                *w = s[[r, reflect(c as isize + off, cols)]];
            }
            out[[r, c]] = median_of(&mut window);
        }
    }
    out
}

/// Median filter along the frequency axis (each column independently).
fn median_filter_cols(s: &Array2<f32>, kernel: usize) -> Array2<f32> {
    let (rows, cols) = s.dim();
    let half = (kernel / 2) as isize;
    let mut out = Array2::<f32>::zeros((rows, cols));
    let mut window = vec![0.0f32; kernel];
    for c in 0..cols {
        for r in 0..rows {
            for (w, off) in window.iter_mut().zip(-half..=half) {
                *w = s[[reflect(r as isize + off, rows), c]];
            }
            out[[r, c]] = median_of(&mut window);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn wrap(m: Array2<f32>) -> Spectrogram {
        Spectrogram {
            magnitudes: m,
            frame_ms: 20.0,
            overlap: 0.5,
            fft_size: 1024,
        }
    }

    /// Desk-scale reference: same algorithm, written as directly as possible
    /// with naive full sorts, used to cross-check the production path.
    fn hpss_reference(s: &Array2<f32>, kernel: usize, power: f32) -> (Array2<f32>, Array2<f32>) {
        let (rows, cols) = s.dim();
        let half = kernel as isize / 2;
        let med = |vals: &mut Vec<f32>| {
            vals.sort_by(f32::total_cmp);
            vals[vals.len() / 2]
        };
        let mut he = Array2::<f32>::zeros((rows, cols));
        let mut pe = Array2::<f32>::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let mut w: Vec<f32> = (-half..=half)
                    .map(|o| s[[r, reflect(c as isize + o, cols)]])
                    .collect();
                he[[r, c]] = med(&mut w);
                let mut w: Vec<f32> = (-half..=half)
                    .map(|o| s[[reflect(r as isize + o, rows), c]])
                    .collect();
                pe[[r, c]] = med(&mut w);
            }
        }
        let mut h = Array2::<f32>::zeros((rows, cols));
        let mut p = Array2::<f32>::zeros((rows, cols));
        for idx in ndarray::indices((rows, cols)) {
            let hp = he[idx].powf(power);
            let pp = pe[idx].powf(power);
            let m = if hp + pp > 0.0 { hp / (hp + pp) } else { 0.5 };
            h[idx] = s[idx] * m;
            p[idx] = s[idx] * (1.0 - m);
        }
        (h, p)
    }

    /// Horizontal ridge: a steady tone occupies one row across all frames.
    fn tone_spec(rows: usize, cols: usize) -> Array2<f32> {
        let mut s = Array2::<f32>::from_elem((rows, cols), 0.01);
        for c in 0..cols {
            s[[rows / 3, c]] = 1.0;
        }
        s
    }

    /// Vertical ridges: clicks occupy all rows in a few frames.
    fn click_spec(rows: usize, cols: usize) -> Array2<f32> {
        let mut s = Array2::<f32>::from_elem((rows, cols), 0.01);
        let mut c = 0;
        while c < cols {
            for r in 0..rows {
                s[[r, c]] = 1.0;
            }
            c += 10;
        }
        s
    }

    #[test]
    fn matches_naive_reference() {
        let s = {
            let mut s = tone_spec(24, 40);
            s += &click_spec(24, 40);
            s
        };
        let (h, p) = hpss(&wrap(s.clone()), 9, 2.0).unwrap();
        let (hr, pr) = hpss_reference(&s, 9, 2.0);
        for (a, b) in h.magnitudes.iter().zip(hr.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in p.magnitudes.iter().zip(pr.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tone_energy_goes_harmonic() {
        let s = tone_spec(32, 64);
        let (h, p) = hpss(&wrap(s), 17, 2.0).unwrap();
        let eh: f32 = h.magnitudes.iter().map(|v| v * v).sum();
        let ep: f32 = p.magnitudes.iter().map(|v| v * v).sum();
        assert!(eh / (eh + ep) >= 0.8, "harmonic share {}", eh / (eh + ep));
    }

    #[test]
    fn clicks_energy_goes_percussive() {
        let s = click_spec(32, 64);
        let (h, p) = hpss(&wrap(s), 17, 2.0).unwrap();
        let eh: f32 = h.magnitudes.iter().map(|v| v * v).sum();
        let ep: f32 = p.magnitudes.iter().map(|v| v * v).sum();
        assert!(ep / (eh + ep) >= 0.8, "percussive share {}", ep / (eh + ep));
    }

    #[test]
    fn zeros_stay_zero() {
        let s = Array2::<f32>::zeros((16, 16));
        let (h, p) = hpss(&wrap(s), 17, 2.0).unwrap();
        assert!(h.magnitudes.iter().all(|&v| v == 0.0));
        assert!(p.magnitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masks_partition_the_input() {
        // H + P must reconstruct the input to float precision.
        let mut s = Array2::<f32>::zeros((20, 30));
        for (i, v) in s.iter_mut().enumerate() {
            *v = ((i * 2_654_435_761) % 1000) as f32 / 250.0;
        }
        let (h, p) = hpss(&wrap(s.clone()), 5, 2.0).unwrap();
        for ((a, b), c) in h.magnitudes.iter().zip(p.magnitudes.iter()).zip(s.iter()) {
            let sum = a + b;
            let tol = 1e-5 * c.abs().max(1.0);
            assert!((sum - c).abs() <= tol, "{sum} vs {c}");
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(0, 5), 0);
        assert_eq!(reflect(4, 5), 4);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
    }
}
