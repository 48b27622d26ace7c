//! Power spectrograms and spectral-subtraction denoising.

use rustfft::{num_complex::Complex, FftPlanner};

use super::AudioClip;
use crate::error::{Error, Result};

/// Frames x bins power map: `values[frame * bins + bin] = |X_bin|^2` of the
/// Hann-windowed frame. Only the Hermitian half-spectrum is kept, so
/// `bins == n_fft/2 + 1`.
#[derive(Debug, Clone)]
pub struct PowerSpectrogram {
    pub values: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: String,
    /// Set when the clip was shorter than one FFT frame and had to be padded.
    pub padded: bool,
}

impl PowerSpectrogram {
    pub fn frame(&self, k: usize) -> &[f32] {
        &self.values[k * self.bins..(k + 1) * self.bins]
    }
}

/// Per-bin noise power estimate.
#[derive(Debug, Clone)]
pub struct NoiseProfile {
    pub values: Vec<f32>,
    pub frames_used: usize,
}

fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .map(|v| v as f32)
        .collect()
}

/// Short-time power spectrum with a periodic Hann window. Frame `k` covers
/// samples `[k*hop, k*hop + n_fft)`; clips shorter than `n_fft` are
/// zero-padded to a single frame (flagged via `padded`).
pub fn stft_power(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<PowerSpectrogram> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::Config(format!("stft: n_fft must be a power of two, got {n_fft}")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::Config(format!("stft: hop {hop} not in [1, n_fft={n_fft}]")));
    }

    let mut samples = &clip.samples[..];
    let mut storage;
    let mut padded = false;
    if samples.len() < n_fft {
        storage = clip.samples.clone();
        storage.resize(n_fft, 0.0);
        samples = &storage;
        padded = true;
    }

    let frames = (samples.len() - n_fft) / hop + 1;
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);

    let mut values = vec![0.0f32; frames * bins];
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    for k in 0..frames {
        let frame = &samples[k * hop..k * hop + n_fft];
        for i in 0..n_fft {
            buf[i] = Complex::new(frame[i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let row = &mut values[k * bins..(k + 1) * bins];
        for (b, item) in row.iter_mut().enumerate() {
            *item = buf[b].norm_sqr();
        }
    }

    Ok(PowerSpectrogram {
        values,
        frames,
        bins,
        n_fft,
        hop,
        sample_rate: clip.sample_rate,
        window: "hann".into(),
        padded,
    })
}

/// Noise power estimate: the per-bin mean over the `ceil(fraction * frames)`
/// frames with the lowest total energy. Energy ties break to the earlier
/// frame.
pub fn estimate_noise(spec: &PowerSpectrogram, fraction: f64) -> Result<NoiseProfile> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Config(format!("estimate_noise: fraction {fraction} not in (0, 1]")));
    }
    let take = ((fraction * spec.frames as f64).ceil() as usize).clamp(1, spec.frames);

    let mut order: Vec<usize> = (0..spec.frames).collect();
    let energies: Vec<f64> = (0..spec.frames)
        .map(|k| spec.frame(k).iter().map(|&v| v as f64).sum())
        .collect();
    order.sort_by(|&a, &b| {
        energies[a]
            .partial_cmp(&energies[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut acc = vec![0.0f64; spec.bins];
    for &k in &order[..take] {
        for (a, &v) in acc.iter_mut().zip(spec.frame(k)) {
            *a += v as f64;
        }
    }
    let values = acc.iter().map(|&a| (a / take as f64) as f32).collect();
    Ok(NoiseProfile {
        values,
        frames_used: take,
    })
}

/// `max(P_x - alpha * P_n, 0)` per frame and bin.
pub fn spectral_subtract(
    spec: &PowerSpectrogram,
    noise: &NoiseProfile,
    alpha: f64,
) -> Result<PowerSpectrogram> {
    if noise.values.len() != spec.bins {
        return Err(Error::Dimension(format!(
            "spectral_subtract: noise profile has {} bins, spectrogram has {}",
            noise.values.len(),
            spec.bins
        )));
    }
    if alpha < 0.0 {
        return Err(Error::Config(format!("spectral_subtract: alpha {alpha} must be >= 0")));
    }
    let a = alpha as f32;
    let mut out = spec.clone();
    for k in 0..spec.frames {
        let row = &mut out.values[k * spec.bins..(k + 1) * spec.bins];
        for (v, &n) in row.iter_mut().zip(&noise.values) {
            *v = (*v - a * n).max(0.0);
        }
    }
    Ok(out)
}
