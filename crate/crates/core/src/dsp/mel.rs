//! Triangular Mel filterbank and log-Mel mapping.

use super::stft::PowerSpectrogram;
use crate::error::{Error, Result};

/// Perceptual frequency mapping `C1 * log10(1 + hz / C2)`.
pub fn hz_to_mel(hz: f64, c1: f64, c2: f64) -> f64 {
    c1 * (1.0 + hz / c2).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64, c1: f64, c2: f64) -> f64 {
    c2 * (10f64.powf(mel / c1) - 1.0)
}

/// Triangular filterbank sampled at FFT bin frequencies.
///
/// Breakpoints are equally spaced on the perceptual scale and then snapped to
/// the nearest FFT bin, so each row peaks at exactly 1 on its center bin and
/// adjacent rows share breakpoints. Between the first and last center
/// frequency the rows sum to exactly 1 (partition of unity).
#[derive(Debug, Clone)]
pub struct MelFilterBank {
    /// `n_mels x bins`, row-major.
    pub filters: Vec<f32>,
    pub n_mels: usize,
    pub bins: usize,
    /// Snapped breakpoints in Hz, length `n_mels + 2`: the lower edge, the
    /// `n_mels` centers, and the upper edge.
    pub center_frequencies: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl MelFilterBank {
    pub fn row(&self, m: usize) -> &[f32] {
        &self.filters[m * self.bins..(m + 1) * self.bins]
    }
}

#[allow(clippy::too_many_arguments)]
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    c1: f64,
    c2: f64,
) -> Result<MelFilterBank> {
    if n_mels < 2 {
        return Err(Error::Config(format!("mel_filterbank: n_mels must be >= 2, got {n_mels}")));
    }
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(Error::Config("mel_filterbank: C1 and C2 must be positive".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(Error::Config(format!(
            "mel_filterbank: range [{fmin}, {fmax}] invalid for Nyquist {nyquist}"
        )));
    }

    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;

    // n_mels + 2 equally spaced points on the perceptual scale, mapped back
    // to Hz and snapped to the nearest FFT bin.
    let lo = hz_to_mel(fmin, c1, c2);
    let hi = hz_to_mel(fmax, c1, c2);
    let mut edges = Vec::with_capacity(n_mels + 2);
    for i in 0..n_mels + 2 {
        let mel = lo + (hi - lo) * i as f64 / (n_mels + 1) as f64;
        let hz = mel_to_hz(mel, c1, c2);
        let bin = (hz / bin_hz).round().min((bins - 1) as f64).max(0.0) as usize;
        edges.push(bin);
    }
    for w in edges.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config(format!(
                "mel_filterbank: {} filters collapse adjacent breakpoints at bin {}; \
                 reduce n_mels or increase n_fft",
                n_mels, w[0]
            )));
        }
    }

    let mut filters = vec![0.0f32; n_mels * bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut filters[m * bins..(m + 1) * bins];
        for b in left..=center {
            row[b] = ((b - left) as f64 / (center - left) as f64) as f32;
        }
        for b in center + 1..=right {
            row[b] = ((right - b) as f64 / (right - center) as f64) as f32;
        }
    }

    let center_frequencies = edges.iter().map(|&b| b as f64 * bin_hz).collect();
    Ok(MelFilterBank {
        filters,
        n_mels,
        bins,
        center_frequencies,
        c1,
        c2,
    })
}

/// Time x mel energy map.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    /// `time_steps x n_mels`, row-major.
    pub values: Vec<f32>,
    pub time_steps: usize,
    pub n_mels: usize,
}

const LOG_FLOOR: f32 = 1e-10;

/// `mel[t][m] = ln(sum_b filter[m][b] * power[t][b] + 1e-10)`. The floor
/// keeps exact spectral-subtraction zeros from producing -inf.
pub fn log_mel(spec: &PowerSpectrogram, fb: &MelFilterBank) -> Result<MelSpectrogram> {
    if fb.bins != spec.bins {
        return Err(Error::Dimension(format!(
            "log_mel: filterbank has {} bins, spectrogram has {}",
            fb.bins, spec.bins
        )));
    }
    let mut values = vec![0.0f32; spec.frames * fb.n_mels];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            let mut acc = 0.0f32;
            for b in 0..fb.bins {
                if row[b] != 0.0 {
                    acc += row[b] * frame[b];
                }
            }
            values[t * fb.n_mels + m] = (acc + LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        time_steps: spec.frames,
        n_mels: fb.n_mels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft_power, AudioClip};

    #[test]
    fn perceptual_scale_fixed_points() {
        // log10(1) = 0 regardless of constants
        assert_eq!(hz_to_mel(0.0, 2595.0, 700.0), 0.0);
        assert_eq!(hz_to_mel(0.0, 1127.0, 700.0), 0.0);
        // 2595 * log10(2) at 700 Hz
        let got = hz_to_mel(700.0, 2595.0, 700.0);
        let want = 2595.0 * 2f64.log10();
        assert!((got - want).abs() < 1e-9);
        assert!((want - 781.17).abs() < 0.01);
    }

    #[test]
    fn scale_round_trip() {
        for hz in [0.0, 123.4, 1000.0, 7999.0] {
            let back = mel_to_hz(hz_to_mel(hz, 2595.0, 700.0), 2595.0, 700.0);
            assert!((back - hz).abs() < 1e-6);
        }
    }

    fn default_fb() -> MelFilterBank {
        mel_filterbank(64, 1024, 16_000, 0.0, 8_000.0, 2595.0, 700.0).unwrap()
    }

    #[test]
    fn rows_are_triangles_with_unit_peak() {
        let fb = default_fb();
        let bin_hz = 16_000.0 / 1024.0;
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, 1, "filter {m} has {ones} unit peaks");
            let peak_bin = row.iter().position(|&v| v == 1.0).unwrap();
            assert!((peak_bin as f64 * bin_hz - fb.center_frequencies[m + 1]).abs() < 1e-9);
            // Zero outside the support edges.
            let left = (fb.center_frequencies[m] / bin_hz) as usize;
            let right = (fb.center_frequencies[m + 2] / bin_hz) as usize;
            for (b, &v) in row.iter().enumerate() {
                if b < left || b > right {
                    assert_eq!(v, 0.0, "filter {m} leaks at bin {b}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_between_centers() {
        let fb = default_fb();
        let bin_hz = 16_000.0 / 1024.0;
        let first_center = fb.center_frequencies[1];
        let last_center = fb.center_frequencies[fb.n_mels];
        for b in 0..fb.bins {
            let f = b as f64 * bin_hz;
            if f > first_center && f < last_center {
                let s: f64 = (0..fb.n_mels).map(|m| fb.row(m)[b] as f64).sum();
                assert!((s - 1.0).abs() < 1e-6, "sum {s} at bin {b}");
            }
        }
    }

    #[test]
    fn too_many_filters_is_config_error() {
        let err = mel_filterbank(512, 1024, 16_000, 0.0, 8_000.0, 2595.0, 700.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_range_is_config_error() {
        assert!(mel_filterbank(64, 1024, 16_000, 0.0, 9_000.0, 2595.0, 700.0).is_err());
        assert!(mel_filterbank(64, 1024, 16_000, 5_000.0, 4_000.0, 2595.0, 700.0).is_err());
    }

    fn silent_spec(frames: usize) -> PowerSpectrogram {
        let clip = AudioClip {
            samples: vec![0.0; 1024 + 256 * (frames - 1)],
            sample_rate: 16_000,
            label: None,
            source_path: String::new(),
        };
        stft_power(&clip, 1024, 256).unwrap()
    }

    #[test]
    fn zero_spectrogram_maps_to_log_floor() {
        let fb = default_fb();
        let mel = log_mel(&silent_spec(3), &fb).unwrap();
        let want = (1e-10f32).ln();
        assert!(mel.values.iter().all(|&v| v == want));
        assert_eq!(mel.time_steps, 3);
        assert_eq!(mel.n_mels, 64);
    }

    #[test]
    fn impulse_excites_only_overlapping_filters() {
        let fb = default_fb();
        let mut spec = silent_spec(1);
        let hot_bin = 100;
        spec.values[hot_bin] = 5.0;
        let mel = log_mel(&spec, &fb).unwrap();
        let floor = (1e-10f32).ln();
        for m in 0..fb.n_mels {
            let overlaps = fb.row(m)[hot_bin] != 0.0;
            let responded = mel.values[m] > floor;
            assert_eq!(overlaps, responded, "filter {m}");
        }
    }

    #[test]
    fn matches_dense_matmul_oracle_exactly() {
        let fb = default_fb();
        let mut spec = silent_spec(4);
        let mut x = 7u32;
        for v in spec.values.iter_mut() {
            x = x.wrapping_mul(1664525).wrapping_add(1013904223);
            *v = (x >> 8) as f32 / (1 << 26) as f32;
        }
        let mel = log_mel(&spec, &fb).unwrap();
        // Dense transcription: full dot product over every bin, then log.
        for t in 0..spec.frames {
            for m in 0..fb.n_mels {
                let mut acc = 0.0f32;
                for b in 0..fb.bins {
                    acc += fb.row(m)[b] * spec.frame(t)[b];
                }
                let want = (acc + 1e-10).ln();
                assert_eq!(mel.values[t * fb.n_mels + m], want, "t={t} m={m}");
            }
        }
    }
}
